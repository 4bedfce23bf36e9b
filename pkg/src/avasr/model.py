"""End-to-end model: video front-end + A/V encoder + RNN-T decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import FEATURE_DIM, extract_features
from .augment import mtr_sample
from .config import RunConfig
from .encoder import build_encoder, fuse
from .frontends import Vgg21d, VitFrontEnd
from .synth import SyntheticAvExample
from .tensor import Tensor
from .transducer import (
    JointNet,
    PredictionNet,
    decode_ids,
    greedy_decode,
    rnnt_loss,
)


def with_prefix(params, prefix):
    return {prefix + name: value for name, value in params.items()}

def sub_params(params, prefix):
    return {name[len(prefix):]: value for name, value in params.items() if name.startswith(prefix)}


@dataclass
class PreparedExample:
    audio_features: np.ndarray | None
    video_input: object  # TubeletBatch for vit, raw frames for vgg, None for audio-only
    labels: list
    transcript: str


class AvTransducer:
    """Builds the configured pipeline and runs loss/decoding on examples."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        if cfg.frontend_kind == "vit":
            self.frontend = VitFrontEnd(cfg.vit)
            visual_dim = cfg.vit.embed_dim
        elif cfg.frontend_kind == "vgg":
            self.frontend = Vgg21d(cfg.vgg)
            visual_dim = cfg.vgg.out_dim
        else:
            self.frontend = None
            visual_dim = 0
        if cfg.modality == "av":
            input_dim = FEATURE_DIM + visual_dim
        elif cfg.modality == "video":
            input_dim = visual_dim
        else:
            input_dim = FEATURE_DIM
        self.encoder_input_dim = input_dim
        self.encoder = build_encoder(cfg.encoder, input_dim)
        self.prediction = PredictionNet(cfg.decoder)
        self.joint = JointNet(cfg.decoder, cfg.encoder.model_dim)

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        params = {}
        if self.frontend is not None:
            params.update(with_prefix(self.frontend.init_params(rng), "frontend."))
        params.update(with_prefix(self.encoder.init_params(rng), "encoder."))
        params.update(with_prefix(self.prediction.init_params(rng), "pred."))
        params.update(with_prefix(self.joint.init_params(rng), "joint."))
        return params

    def prepare_example(self, example: SyntheticAvExample, rng=None) -> PreparedExample:
        """Feature extraction and front-end input prep, with optional MTR.

        The unused modality is dropped here, so a video-only model never
        touches the audio track at all.
        """
        cfg = self.cfg
        audio_features = None
        if cfg.modality in ("av", "audio"):
            waveform = example.audio
            if cfg.mtr is not None and rng is not None:
                waveform = mtr_sample(waveform, rng, cfg.mtr)
            audio_features = extract_features(waveform).values
        video_input = None
        if cfg.modality in ("av", "video"):
            if cfg.frontend_kind == "vit":
                video_input = self.frontend.preprocess(example.video)
            else:
                video_input = example.video.frames
        return PreparedExample(audio_features, video_input, example.labels, example.transcript)

    def encode(self, prepared: PreparedExample, params):
        cfg = self.cfg
        if cfg.modality == "audio":
            fused = Tensor(prepared.audio_features)
        else:
            visual = self.frontend.forward(prepared.video_input, sub_params(params, "frontend."))
            audio = prepared.audio_features if cfg.modality == "av" else None
            fused = fuse(audio, visual)
        return self.encoder.forward(fused, sub_params(params, "encoder."))

    def forward_loss(self, prepared: PreparedExample, params):
        h = self.encode(prepared, params)
        g = self.prediction.forward(prepared.labels, sub_params(params, "pred."))
        lattice = self.joint.forward(h, g, sub_params(params, "joint."))
        return rnnt_loss(lattice, prepared.labels)

    def transcribe(self, prepared: PreparedExample, params) -> str:
        h = self.encode(prepared, params)
        ids = greedy_decode(
            h, self.prediction, sub_params(params, "pred."), self.joint, sub_params(params, "joint.")
        )
        return decode_ids(ids)
