"""Modality fusion and the two sequence encoders (transformer / conformer).

Fusion is row-wise concatenation of acoustic and visual features; both
encoders use windowed self-attention with learned relative-position biases,
so outputs are shift-equivariant away from sequence boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import tensor as T
from .audio import AudioFeatures
from .tensor import Tensor


class AlignmentError(ValueError):
    """Audio and video feature row counts disagree."""


@dataclass
class EncoderConfig:
    kind: str = "transformer"  # or "conformer"
    layers: int = 14
    model_dim: int = 512
    heads: int = 8
    attn_window: int = 100
    conv_kernel: int = 32  # conformer only
    ffn_dim: int = 2048

    def __post_init__(self):
        if self.kind not in ("transformer", "conformer"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {self.heads} heads")
        if self.attn_window < 0:
            raise ValueError("attn_window must be >= 0")


def paper_transformer_config():
    return EncoderConfig(kind="transformer", layers=14)


def paper_conformer_config():
    return EncoderConfig(kind="conformer", layers=17)


def fuse(audio_features, visual_features):
    """Concatenate acoustic and visual rows; with no audio, F = V."""
    if isinstance(audio_features, AudioFeatures):
        audio_features = audio_features.values
    v = visual_features if isinstance(visual_features, Tensor) else Tensor(visual_features)
    if audio_features is None:
        return v
    a = audio_features if isinstance(audio_features, Tensor) else Tensor(audio_features)
    if a.shape[0] != v.shape[0]:
        raise AlignmentError(
            f"audio rows {a.shape[0]} != video rows {v.shape[0]}; cannot fuse"
        )
    return T.concat([a, v], axis=1)


def local_attention_mask(length, window):
    """Boolean (T, T) matrix: True iff |i - j| <= window."""
    if length < 1:
        raise ValueError("mask needs at least one timestep")
    offsets = np.abs(np.arange(length)[None, :] - np.arange(length)[:, None])
    return offsets <= window


class _EncoderBase:
    def __init__(self, config: EncoderConfig, input_dim):
        self.config = config
        self.input_dim = input_dim

    def _common_params(self, rng):
        cfg = self.config
        params = {}
        params.update(L.linear_params(rng, "input", self.input_dim, cfg.model_dim))
        params["rel_pos"] = Tensor(
            np.zeros((2 * cfg.attn_window + 1, cfg.heads)), requires_grad=True
        )
        return params


class TransformerEncoder(_EncoderBase):
    """Pre-norm transformer with windowed attention and relative biases."""

    def __init__(self, config: EncoderConfig | None = None, input_dim=752):
        super().__init__(config or paper_transformer_config(), input_dim)
        if self.config.kind != "transformer":
            raise ValueError("TransformerEncoder requires kind='transformer'")

    def init_params(self, rng):
        cfg = self.config
        params = self._common_params(rng)
        for i in range(cfg.layers):
            params.update(L.norm_params(f"layer{i}.ln1", cfg.model_dim))
            params.update(L.attention_params(rng, f"layer{i}.attn", cfg.model_dim))
            params.update(L.norm_params(f"layer{i}.ln2", cfg.model_dim))
            params.update(L.feed_forward_params(rng, f"layer{i}.ffn", cfg.model_dim, cfg.ffn_dim))
        params.update(L.norm_params("out_ln", cfg.model_dim))
        return params

    def forward(self, fused, params, return_probs=False):
        cfg = self.config
        f = fused if isinstance(fused, Tensor) else Tensor(fused)
        if f.shape[1] != self.input_dim:
            raise ValueError(f"encoder expects {self.input_dim} input features, got {f.shape[1]}")
        t_len = f.shape[0]
        bias = L.relative_bias(params["rel_pos"], t_len, cfg.attn_window)
        mask = L.local_mask_add(t_len, cfg.attn_window)
        x = T.reshape(L.linear(f, params, "input"), 1, t_len, cfg.model_dim)
        probs = []
        for i in range(cfg.layers):
            h = L.norm(x, params, f"layer{i}.ln1")
            attn, p = L.multi_head_attention(
                h, params, f"layer{i}.attn", cfg.heads, bias=bias, mask_add=mask, return_probs=True
            )
            probs.append(p)
            x = x + attn
            h = L.norm(x, params, f"layer{i}.ln2")
            x = x + L.feed_forward(h, params, f"layer{i}.ffn")
        x = L.norm(x, params, "out_ln")
        out = T.reshape(x, t_len, cfg.model_dim)
        if return_probs:
            return out, probs
        return out


class ConformerEncoder(_EncoderBase):
    """Conformer blocks: half-step FFN, windowed attention, GLU-gated
    depthwise convolution module, half-step FFN, block layer-norm."""

    def __init__(self, config: EncoderConfig | None = None, input_dim=752):
        super().__init__(config or paper_conformer_config(), input_dim)
        if self.config.kind != "conformer":
            raise ValueError("ConformerEncoder requires kind='conformer'")

    def init_params(self, rng):
        cfg = self.config
        params = self._common_params(rng)
        d = cfg.model_dim
        for i in range(cfg.layers):
            params.update(L.norm_params(f"layer{i}.ffn1_ln", d))
            params.update(L.feed_forward_params(rng, f"layer{i}.ffn1", d, cfg.ffn_dim))
            params.update(L.norm_params(f"layer{i}.attn_ln", d))
            params.update(L.attention_params(rng, f"layer{i}.attn", d))
            params.update(L.norm_params(f"layer{i}.conv_ln", d))
            params.update(L.linear_params(rng, f"layer{i}.conv_in", d, 2 * d))
            params[f"layer{i}.conv_dw"] = Tensor(
                L.truncated_normal(rng, (cfg.conv_kernel, d), std=np.sqrt(1.0 / cfg.conv_kernel)),
                requires_grad=True,
            )
            params.update(L.linear_params(rng, f"layer{i}.conv_out", d, d))
            params.update(L.norm_params(f"layer{i}.ffn2_ln", d))
            params.update(L.feed_forward_params(rng, f"layer{i}.ffn2", d, cfg.ffn_dim))
            params.update(L.norm_params(f"layer{i}.block_ln", d))
        return params

    def _conv_module(self, x, params, prefix):
        h = L.norm(x, params, f"{prefix}_ln")
        h = L.linear(h, params, f"{prefix}_in")
        d = self.config.model_dim
        gate = T.sigmoid(h[:, d:])
        h = h[:, :d] * gate  # gated linear unit
        h = T.conv_depthwise(h, params[f"{prefix}_dw"])
        h = T.swish(h)
        return L.linear(h, params, f"{prefix}_out")

    def forward(self, fused, params, return_probs=False):
        cfg = self.config
        f = fused if isinstance(fused, Tensor) else Tensor(fused)
        if f.shape[1] != self.input_dim:
            raise ValueError(f"encoder expects {self.input_dim} input features, got {f.shape[1]}")
        t_len = f.shape[0]
        bias = L.relative_bias(params["rel_pos"], t_len, cfg.attn_window)
        mask = L.local_mask_add(t_len, cfg.attn_window)
        x = L.linear(f, params, "input")
        probs = []
        for i in range(cfg.layers):
            h = L.norm(x, params, f"layer{i}.ffn1_ln")
            x = x + 0.5 * L.feed_forward(h, params, f"layer{i}.ffn1", activation=T.swish)
            h = T.reshape(L.norm(x, params, f"layer{i}.attn_ln"), 1, t_len, cfg.model_dim)
            attn, p = L.multi_head_attention(
                h, params, f"layer{i}.attn", cfg.heads, bias=bias, mask_add=mask, return_probs=True
            )
            probs.append(p)
            x = x + T.reshape(attn, t_len, cfg.model_dim)
            x = x + self._conv_module(x, params, f"layer{i}.conv")
            h = L.norm(x, params, f"layer{i}.ffn2_ln")
            x = x + 0.5 * L.feed_forward(h, params, f"layer{i}.ffn2", activation=T.swish)
            x = L.norm(x, params, f"layer{i}.block_ln")
        if return_probs:
            return x, probs
        return x


def build_encoder(config: EncoderConfig, input_dim):
    cls = TransformerEncoder if config.kind == "transformer" else ConformerEncoder
    return cls(config, input_dim)
