"""Training and evaluation loops: deterministic batching, worker fan-out,
metrics CSV, periodic eval and rolling checkpoints."""

from __future__ import annotations

import concurrent.futures
import os
import shutil
from pathlib import Path

import numpy as np

from .augment import EVAL_SNRS_DB, mix_at_snr, overlap_mix, synth_babble
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .model import AvTransducer
from .optim import Adam, clip_gradients
from .synth import gen_synthetic, load_dataset
from .tensor import Tape, Tensor
from .transducer import corpus_wer

METRICS_HEADER = "step,loss,lr,grad_norm"
NOISE_NAMES = ("none", "babble20", "babble10", "babble0", "overlap")


class TrainingDiverged(RuntimeError):
    """Non-finite loss; the last good checkpoint is retained on disk."""


def batch_indices(seed, step, n, batch_size):
    rng = np.random.default_rng([seed, step])
    return rng.integers(0, n, size=batch_size)


def example_rng(seed, step, slot):
    return np.random.default_rng([seed, step, slot])


def load_data(cfg: RunConfig):
    data = cfg.data
    if data.kind == "synthetic":
        train = gen_synthetic([data.seed, 0], data.n_train, (data.len_lo, data.len_hi), data.channels)
        holdout = gen_synthetic([data.seed, 1], data.n_eval, (data.len_lo, data.len_hi), data.channels)
        return train, holdout
    if data.kind == "dir":
        return load_dataset(data.train_dir), load_dataset(data.eval_dir)
    raise ValueError(f"unknown data kind {data.kind!r}")


def worker_count(cfg: RunConfig):
    cap = os.environ.get("AVT_THREADS")
    workers = cfg.workers
    if cap is not None:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def apply_noise(example_audio, noise, index, eval_set, seed):
    """Eval-time corruption matching the --noise CLI flag."""
    if noise in (None, "none"):
        return example_audio
    if noise.startswith("babble"):
        snr = float(noise[len("babble"):])
        assert snr in EVAL_SNRS_DB
        babble = synth_babble([seed, 77, index], example_audio.duration)
        return mix_at_snr(example_audio, babble, snr)
    if noise == "overlap":
        fixed = int(np.random.default_rng([seed, 88]).integers(0, len(eval_set)))
        other = eval_set[fixed].audio
        return overlap_mix(example_audio, other)
    raise ValueError(f"unknown noise condition {noise!r}; choose from {NOISE_NAMES}")


def evaluate(model: AvTransducer, params, eval_set, noise=None, seed=0):
    """Corpus WER of greedy decoding over the held-out set."""
    refs, hyps = [], []
    for i, example in enumerate(eval_set):
        if model.cfg.modality in ("av", "audio") and noise not in (None, "none"):
            example = type(example)(
                video=example.video,
                audio=apply_noise(example.audio, noise, i, eval_set, seed),
                transcript=example.transcript,
            )
        prepared = model.prepare_example(example)
        hyps.append(model.transcribe(prepared, params).split())
        refs.append(example.transcript.split())
    return corpus_wer(refs, hyps)


def _run_example(model, params, param_names, example, rng):
    prepared = model.prepare_example(example, rng)
    with Tape() as tape:
        loss = model.forward_loss(prepared, params)
        grads = tape.gradients(loss, [params[n] for n in param_names])
    return float(loss.data), grads


def save_training_checkpoint(out_dir, step, params, optimizer, cfg, keep):
    path = Path(out_dir) / f"ckpt_{step:06d}"
    arrays = {name: p.data for name, p in params.items()}
    arrays.update(optimizer.state_tensors())
    save_checkpoint(path, arrays, meta={"step": step, "config": cfg.to_dict()})
    kept = sorted(Path(out_dir).glob("ckpt_*"))
    for old in kept[:-keep]:
        shutil.rmtree(old)
    return path


def load_model_checkpoint(path):
    """Rebuild (cfg, model, params, optimizer state arrays, step)."""
    arrays, meta = load_checkpoint(path)
    cfg = RunConfig.from_dict(meta["config"])
    model = AvTransducer(cfg)
    params = {}
    opt_state = {}
    for name, value in arrays.items():
        if name.startswith("adam."):
            opt_state[name] = value
        else:
            params[name] = Tensor(value, requires_grad=True)
    return cfg, model, params, opt_state, meta["step"]


def train(cfg: RunConfig, out_dir, resume=None, log=None):
    """Run the training loop; returns a summary dict.

    Writes metrics.csv (step,loss,lr,grad_norm), eval.csv (step,wer) and
    rolling checkpoints under ``out_dir``.  Determinism contract: one worker
    reproduces the loss trajectory bitwise for a fixed seed; more workers
    only change scheduling, not the reduction order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    say = log or (lambda msg: None)

    train_set, eval_set = load_data(cfg)
    model = AvTransducer(cfg)
    optimizer = Adam()
    start_step = 0
    if resume is not None:
        _, _, params, opt_state, start_step = load_model_checkpoint(resume)
        if opt_state:
            optimizer.load_state(opt_state)
        say(f"resumed from {resume} at step {start_step}")
    else:
        params = model.init_params(cfg.seed)
    param_names = list(params)

    workers = worker_count(cfg)
    pool = (
        concurrent.futures.ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    )
    losses = []
    wers = []
    best_wer = float("inf")
    last_ckpt = None
    mode = "a" if resume is not None else "w"
    metrics = open(out_dir / "metrics.csv", mode)
    eval_log = open(out_dir / "eval.csv", mode)
    if mode == "w":
        metrics.write(METRICS_HEADER + "\n")
        eval_log.write("step,wer\n")
    try:
        step = start_step
        while step < cfg.train_steps:
            lr = cfg.schedule.rate(step)
            idx = batch_indices(cfg.seed, step, len(train_set), cfg.batch_size)
            jobs = [
                (train_set[int(i)], example_rng(cfg.seed, step, slot))
                for slot, i in enumerate(idx)
            ]
            if pool is not None:
                results = list(
                    pool.map(lambda job: _run_example(model, params, param_names, *job), jobs)
                )
            else:
                results = [_run_example(model, params, param_names, *job) for job in jobs]

            # fixed reduction order: slot 0..B-1, regardless of scheduling
            batch_loss = 0.0
            summed = [None] * len(param_names)
            for loss_value, grads in results:
                batch_loss += loss_value
                for j, g in enumerate(grads):
                    summed[j] = g if summed[j] is None else summed[j] + g
            batch_loss /= len(results)
            grads = {n: g / len(results) for n, g in zip(param_names, summed)}

            if not np.isfinite(batch_loss):
                metrics.flush()
                raise TrainingDiverged(
                    f"non-finite loss {batch_loss} at step {step}; "
                    f"last checkpoint: {last_ckpt}"
                )
            grads, grad_norm = clip_gradients(grads, cfg.grad_clip)
            params = optimizer.step(params, grads, lr)
            losses.append(batch_loss)
            metrics.write(f"{step},{batch_loss!r},{lr!r},{grad_norm!r}\n")
            step += 1

            if cfg.eval_interval and step % cfg.eval_interval == 0:
                wer = evaluate(model, params, eval_set)
                wers.append((step, wer))
                best_wer = min(best_wer, wer)
                eval_log.write(f"{step},{wer!r}\n")
                eval_log.flush()
                say(f"step {step}: loss {batch_loss:.4f} eval WER {wer:.3f}")
                if cfg.early_stop_wer is not None and wer <= cfg.early_stop_wer:
                    say(f"early stop: WER {wer:.3f} <= {cfg.early_stop_wer}")
                    break
            if cfg.ckpt_interval and step % cfg.ckpt_interval == 0:
                last_ckpt = save_training_checkpoint(
                    out_dir, step, params, optimizer, cfg, cfg.ckpt_keep
                )
    finally:
        metrics.close()
        eval_log.close()
        if pool is not None:
            pool.shutdown()

    last_ckpt = save_training_checkpoint(out_dir, step, params, optimizer, cfg, cfg.ckpt_keep)
    final_wer = wers[-1][1] if wers and wers[-1][0] == step else evaluate(model, params, eval_set)
    if not wers or wers[-1][0] != step:
        wers.append((step, final_wer))
    best_wer = min(best_wer, final_wer)
    return {
        "steps": step,
        "losses": losses,
        "wers": wers,
        "final_wer": final_wer,
        "best_wer": best_wer,
        "checkpoint": str(last_ckpt),
        "params": params,
        "model": model,
    }
