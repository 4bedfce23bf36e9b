"""Video front-ends mapping clips to per-timestep feature vectors.

Two interchangeable designs: a transformer that attends over flattened 3D
patches (tubelets) of each frame's temporal window, and a 10-layer VGG-style
stack of (2+1)D factorized convolutions.  Both are length-equivariant: one
output row per input frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T
from .tensor import Tensor
from .video import (
    PatchFrames,
    TubeletBatch,
    TubeletConfig,
    VideoClip,
    extract_patch_frames,
    extract_tubelets,
)


@dataclass
class VitFrontEndConfig:
    channels: int = 3
    embed_dim: int = 512
    layers: int = 6
    heads: int = 8
    ffn_dim: int = 2048
    frame_size: int = 128
    tubelet: TubeletConfig = field(default_factory=TubeletConfig)

    @property
    def n_patches(self):
        return self.tubelet.n_patches(self.frame_size, self.frame_size)

    @property
    def flat_dim(self):
        return self.tubelet.flat_dim(self.channels)


class VitFrontEnd:
    """Tubelet transformer: shared affine embed, patch-axis attention,
    first-patch pooling."""

    def __init__(self, config: VitFrontEndConfig | None = None):
        self.config = config or VitFrontEndConfig()

    def init_params(self, rng):
        cfg = self.config
        params = {}
        params.update(L.linear_params(rng, "embed", cfg.flat_dim, cfg.embed_dim))
        # one table shared by all layers, clipped offsets over patch indices
        params["rel_pos"] = Tensor(np.zeros((2 * cfg.n_patches - 1, cfg.heads)), requires_grad=True)
        for i in range(cfg.layers):
            params.update(L.norm_params(f"layer{i}.ln1", cfg.embed_dim))
            params.update(L.attention_params(rng, f"layer{i}.attn", cfg.embed_dim))
            params.update(L.norm_params(f"layer{i}.ln2", cfg.embed_dim))
            params.update(L.feed_forward_params(rng, f"layer{i}.ffn", cfg.embed_dim, cfg.ffn_dim))
        params.update(L.norm_params("out_ln", cfg.embed_dim))
        return params

    def preprocess(self, clip: VideoClip) -> PatchFrames:
        return extract_patch_frames(clip, self.config.tubelet)

    def _embed_tubelets(self, flat, params):
        return T.matmul(Tensor(flat), params["embed.w"]) + params["embed.b"]

    def _embed_patch_frames(self, pf: PatchFrames, params):
        """Fold the depth axis inside the affine embed.

        The embed is linear over the flattened tubelet, so per-frame patch
        embeddings can be computed once and summed over the window's depth
        slots; this avoids materializing each frame ``depth`` times and is
        exactly equivalent to embedding the TubeletBatch.
        """
        cfg = self.config
        tub = cfg.tubelet
        t_len, n, pp, c = pf.patches.shape
        depth, d_v = tub.depth, cfg.embed_dim
        # weight rows are ordered ((h*w)*depth + slot)*C + c; regroup them so
        # one GEMM yields all depth-slot embeddings per frame
        w4 = T.reshape(params["embed.w"], pp, depth, c, d_v)
        w2 = T.reshape(T.transpose(w4, 0, 2, 1, 3), pp * c, depth * d_v)
        per_frame = T.matmul(Tensor(pf.patches.reshape(t_len * n, pp * c)), w2)
        slots = T.reshape(per_frame, t_len, n, depth, d_v)
        return T.window_slot_sum(slots, depth // 2) + params["embed.b"]

    def forward(self, batch, params):
        """Map tubelets (TubeletBatch, PatchFrames or a raw flat array) to
        (T, embed_dim) features."""
        cfg = self.config
        if isinstance(batch, PatchFrames):
            x = self._embed_patch_frames(batch, params)
            n = batch.patches.shape[1]
        else:
            flat = batch.flat if isinstance(batch, TubeletBatch) else np.asarray(batch)
            if flat.ndim != 3 or flat.shape[2] != cfg.flat_dim:
                raise ValueError(
                    f"tubelet flat shape {flat.shape} does not match configured dim {cfg.flat_dim}"
                )
            n = flat.shape[1]
            x = self._embed_tubelets(flat, params)
        bias = L.relative_bias(params["rel_pos"], n, n - 1)
        for i in range(cfg.layers):
            h = L.norm(x, params, f"layer{i}.ln1")
            x = x + L.multi_head_attention(h, params, f"layer{i}.attn", cfg.heads, bias=bias)
            h = L.norm(x, params, f"layer{i}.ln2")
            x = x + L.feed_forward(h, params, f"layer{i}.ffn")
        x = L.norm(x, params, "out_ln")
        return x[:, 0, :]


def midplane_channels(n_in, n_out, t=3, d=3):
    """Channel count that keeps a factorized (2+1)D pair near the parameter
    budget of the full t x d x d convolution it replaces."""
    return (t * d * d * n_in * n_out) // (d * d * n_in + t * n_out)


# interleaved channel sequence of the 10-layer stack, as (spatial-out,
# temporal-out) pairs; the final pair is fixed verbatim and intentionally
# breaks the midplane rule
PAPER_VGG_STAGES = ((23, 64), (230, 128), (460, 256), (921, 512), (460, 512))
PAPER_VGG_POOLS = (8, 2, 2, 2, 2)


@dataclass
class Vgg21dConfig:
    channels: int = 3
    stages: tuple = PAPER_VGG_STAGES
    pools: tuple = PAPER_VGG_POOLS
    out_dim: int = 512
    frame_size: int = 128

    @property
    def final_spatial(self):
        s = self.frame_size
        for p in self.pools:
            if s % p:
                raise ValueError(f"pool factor {p} does not divide spatial extent {s}")
            s //= p
        return s

    @property
    def proj_in(self):
        return self.final_spatial**2 * self.stages[-1][1]


class Vgg21d:
    """(2+1)D VGG: alternating [1,3,3] and [3,1,1] convolutions with ReLU,
    spatial max pooling between pairs, and a final projection."""

    def __init__(self, config: Vgg21dConfig | None = None):
        self.config = config or Vgg21dConfig()

    def init_params(self, rng):
        cfg = self.config
        params = {}
        c_in = cfg.channels
        for i, (mid, out) in enumerate(cfg.stages):
            # fan-in scaled init: flat std 0.02 makes a 10-layer ReLU conv
            # stack collapse to zero activations
            params[f"stage{i}.spatial.w"] = Tensor(
                L.truncated_normal(rng, (3, 3, c_in, mid), std=np.sqrt(2.0 / (9 * c_in))),
                requires_grad=True,
            )
            params[f"stage{i}.spatial.b"] = Tensor(np.zeros(mid), requires_grad=True)
            params[f"stage{i}.temporal.w"] = Tensor(
                L.truncated_normal(rng, (3, mid, out), std=np.sqrt(2.0 / (3 * mid))),
                requires_grad=True,
            )
            params[f"stage{i}.temporal.b"] = Tensor(np.zeros(out), requires_grad=True)
            c_in = out
        params.update(L.linear_params(rng, "proj", cfg.proj_in, cfg.out_dim))
        return params

    def forward(self, clip, params):
        """Map a VideoClip (or raw frames) to (T, out_dim) features."""
        cfg = self.config
        frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
        if frames.shape[0] < 1:
            raise ValueError("cannot run the front-end on an empty clip")
        x = Tensor(frames)
        for i, _ in enumerate(cfg.stages):
            x = T.relu(T.conv_spatial3(x, params[f"stage{i}.spatial.w"], params[f"stage{i}.spatial.b"]))
            x = T.relu(T.conv_temporal3(x, params[f"stage{i}.temporal.w"], params[f"stage{i}.temporal.b"]))
            if cfg.pools[i] > 1:
                x = T.max_pool_spatial(x, cfg.pools[i])
        t_len = frames.shape[0]
        x = T.reshape(x, t_len, cfg.proj_in)
        return L.linear(x, params, "proj")


def desk_vit_config(channels=1, embed_dim=64, layers=2, heads=4, ffn_dim=256):
    """Small configuration for CPU-scale training on 128x128 clips."""
    return VitFrontEndConfig(
        channels=channels, embed_dim=embed_dim, layers=layers, heads=heads, ffn_dim=ffn_dim
    )


def desk_vgg_config(channels=1, out_dim=64):
    """Small configuration for CPU-scale training.

    Ends at a 4x4 spatial map that is flattened into the projection, so the
    absolute block position survives (a global pool would erase it).
    """
    return Vgg21dConfig(
        channels=channels,
        stages=((6, 12), (16, 16), (24, 24), (32, 32), (32, 32)),
        pools=(8, 2, 2, 1, 1),
        out_dim=out_dim,
    )
