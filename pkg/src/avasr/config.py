"""Run configuration: every hyperparameter of a training/eval run, as JSON.

Presets cover the published model scale (for counting and benchmarking) and
a desk scale that trains on a CPU in minutes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .augment import MtrConfig
from .encoder import EncoderConfig
from .frontends import Vgg21dConfig, VitFrontEndConfig, desk_vgg_config, desk_vit_config
from .optim import LrSchedule
from .transducer import DecoderConfig
from .video import TubeletConfig

MODALITIES = ("av", "video", "audio")


@dataclass
class DataConfig:
    kind: str = "synthetic"  # or "dir"
    seed: int = 1
    n_train: int = 500
    n_eval: int = 50
    len_lo: int = 3
    len_hi: int = 6
    channels: int = 1
    train_dir: str | None = None
    eval_dir: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    modality: str = "video"
    batch_size: int = 8
    workers: int = 1
    train_steps: int = 3000
    eval_interval: int = 100
    ckpt_interval: int = 500
    ckpt_keep: int = 3
    grad_clip: float = 5.0
    early_stop_wer: float | None = None
    frontend_kind: str = "vit"  # vit | vgg | none (audio-only)
    vit: VitFrontEndConfig = field(default_factory=desk_vit_config)
    vgg: Vgg21dConfig = field(default_factory=desk_vgg_config)
    encoder: EncoderConfig = field(
        default_factory=lambda: EncoderConfig(
            kind="transformer", layers=2, model_dim=64, heads=4, attn_window=100, ffn_dim=256
        )
    )
    decoder: DecoderConfig = field(
        default_factory=lambda: DecoderConfig(embed_dim=16, hidden=64, layers=2, joint_dim=64)
    )
    schedule: LrSchedule = field(
        default_factory=lambda: LrSchedule("transformer", 2e-3, 150, 1500, 2e-4, 3000)
    )
    mtr: MtrConfig | None = None
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.frontend_kind not in ("vit", "vgg", "none"):
            raise ValueError(f"unknown frontend kind {self.frontend_kind!r}")
        if self.modality == "audio":
            self.frontend_kind = "none"

    @property
    def frontend_config(self):
        if self.frontend_kind == "vit":
            return self.vit
        if self.frontend_kind == "vgg":
            return self.vgg
        return None

    def to_dict(self):
        d = asdict(self)
        d["vit"]["tubelet"] = asdict(self.vit.tubelet)
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "vit" in d:
            vit = dict(d["vit"])
            if "tubelet" in vit:
                vit["tubelet"] = TubeletConfig(**vit["tubelet"])
            d["vit"] = VitFrontEndConfig(**vit)
        if "vgg" in d:
            vgg = dict(d["vgg"])
            vgg["stages"] = tuple(tuple(s) for s in vgg.get("stages", ()))
            vgg["pools"] = tuple(vgg.get("pools", ()))
            d["vgg"] = Vgg21dConfig(**vgg)
        if "encoder" in d:
            d["encoder"] = EncoderConfig(**d["encoder"])
        if "decoder" in d:
            d["decoder"] = DecoderConfig(**d["decoder"])
        if "schedule" in d:
            d["schedule"] = LrSchedule(**d["schedule"])
        if d.get("mtr") is not None:
            d["mtr"] = MtrConfig(**d["mtr"])
        if "data" in d:
            d["data"] = DataConfig(**d["data"])
        return cls(**d)

    @classmethod
    def from_json(cls, path_or_text):
        text = path_or_text
        path = Path(str(path_or_text))
        if path.exists():
            text = path.read_text()
        return cls.from_dict(json.loads(text))


def desk_run_config(frontend="vit", modality="video", **overrides):
    """CPU-scale training run on the synthetic task."""
    cfg = RunConfig(frontend_kind=frontend, modality=modality)
    if frontend == "vgg":
        cfg.schedule = LrSchedule("transformer", 2e-3, 150, 1500, 2e-4, 3000)
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def paper_run_config(frontend="vit", encoder="transformer", modality="av"):
    """Published scale: builds (for counting/benchmarks), not desk-trainable."""
    enc = EncoderConfig(kind=encoder, layers=14 if encoder == "transformer" else 17)
    schedule = (
        LrSchedule("transformer", 1e-4, 30_000, 200_000, 1e-6, 300_000)
        if encoder == "transformer"
        else LrSchedule("conformer", 1.7e-2, 15_000, 15_000, 1e-6, 300_000)
    )
    return RunConfig(
        modality=modality,
        frontend_kind=frontend,
        vit=VitFrontEndConfig(),
        vgg=Vgg21dConfig(),
        encoder=enc,
        decoder=DecoderConfig(),
        schedule=schedule,
        batch_size=8,
        train_steps=300_000,
        data=DataConfig(channels=3),
    )
