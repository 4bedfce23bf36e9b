"""Command-line interface: features, synth, train, eval, decode, bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .audio import extract_features, read_wav
from .config import RunConfig, paper_run_config
from .flops import bench_latency, count_flops
from .frontends import Vgg21d, Vgg21dConfig, VitFrontEnd, VitFrontEndConfig
from .layers import count_params
from .synth import SyntheticAvExample, gen_synthetic, save_dataset
from .train import NOISE_NAMES, evaluate, load_data, load_model_checkpoint, train
from .video import TARGET_FPS, VideoClip, read_avt, write_avt


def cmd_features(args):
    feats = extract_features(read_wav(args.wav)).values
    write_avt(args.out, feats.reshape(feats.shape[0], 1, 1, feats.shape[1]))
    print(f"wrote {feats.shape[0]} x {feats.shape[1]} features to {args.out}")


def cmd_synth(args):
    examples = gen_synthetic(args.seed, args.n, (args.len_lo, args.len_hi), args.channels)
    save_dataset(args.out, examples, seed=args.seed)
    print(f"wrote {len(examples)} examples to {args.out}")


def cmd_train(args):
    cfg = RunConfig.from_json(args.config)
    summary = train(cfg, args.out, resume=args.resume, log=print)
    print(
        f"finished at step {summary['steps']}: final WER {summary['final_wer']:.3f}, "
        f"checkpoint {summary['checkpoint']}"
    )


def cmd_eval(args):
    cfg, model, params, _, step = load_model_checkpoint(args.ckpt)
    if args.config:
        cfg_override = RunConfig.from_json(args.config)
        cfg.data = cfg_override.data
    _, eval_set = load_data(cfg)
    wer = evaluate(model, params, eval_set, noise=args.noise, seed=cfg.seed)
    print(f"checkpoint step {step}, noise {args.noise}: WER {wer:.4f}")


def cmd_decode(args):
    from .model import PreparedExample

    cfg, model, params, _, _ = load_model_checkpoint(args.ckpt)
    clip = VideoClip(read_avt(args.input), fps=TARGET_FPS)
    feats = None
    if cfg.modality in ("av", "audio"):
        if not args.wav:
            raise SystemExit(f"model modality is {cfg.modality!r}: --wav is required")
        feats = extract_features(read_wav(args.wav)).values
    if cfg.modality == "av":
        # trim to the common row count; fusion itself stays strict
        t = min(len(feats), clip.num_frames)
        feats = feats[:t]
        clip = VideoClip(clip.frames[:t], fps=TARGET_FPS)
    video_input = None
    if cfg.modality in ("av", "video"):
        video_input = model.frontend.preprocess(clip) if cfg.frontend_kind == "vit" else clip.frames
    prepared = PreparedExample(feats, video_input, [], "")
    print(model.transcribe(prepared, params))


def cmd_bench(args):
    if args.frontend == "vit":
        cfg = VitFrontEndConfig()
        frontend = VitFrontEnd(cfg)
    else:
        cfg = Vgg21dConfig()
        frontend = Vgg21d(cfg)
    params = frontend.init_params(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    clip = VideoClip(rng.uniform(size=(args.frames, cfg.frame_size, cfg.frame_size, cfg.channels)))
    if args.frontend == "vit":
        batch = frontend.preprocess(clip)
        fn = lambda: frontend.forward(batch, params)
    else:
        fn = lambda: frontend.forward(clip, params)
    result = bench_latency(fn, repeats=args.repeats)
    flops = count_flops(cfg, args.frames)
    print(
        f"{args.frontend}: {result.mean_ms:.1f} +- {result.std_ms:.1f} ms over "
        f"{result.repeats} runs ({args.frames} frames); "
        f"{flops / 1e9:.1f} GFLOP analytic; {count_params(params) / 1e6:.1f}M params"
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="avasr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="WAV to stacked log-mel features (AVT container)")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("synth", help="generate the synthetic A/V dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--len-lo", type=int, default=3)
    p.add_argument("--len-hi", type=int, default=6)
    p.add_argument("--channels", type=int, default=1)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train from a JSON run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint, optionally under noise")
    p.add_argument("--config", default=None, help="override the data section")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--noise", choices=NOISE_NAMES, default="none")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("decode", help="transcribe one AVT clip (plus optional WAV)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--wav", default=None)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("bench", help="time a paper-scale front-end forward pass")
    p.add_argument("--frontend", choices=("vgg", "vit"), required=True)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--repeats", type=int, default=20)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
