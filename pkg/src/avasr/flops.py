"""Analytic FLOP counts and wall-clock benchmarking for the video front-ends.

Convention: a multiply-add is 2 FLOPs; matrix products cost 2mnk, each
convolution output element costs 2 * (kernel taps * input channels), and
attention is counted as its constituent products.  Elementwise work
(activations, norms, softmax) is not counted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .frontends import Vgg21dConfig, VitFrontEndConfig


def matmul_flops(m, k, n):
    """2mnk for an (m,k) x (k,n) product."""
    return 2 * m * k * n


def conv_flops(out_elements, taps_times_cin):
    return 2 * out_elements * taps_times_cin


def vit_frontend_flops(config: VitFrontEndConfig, frames):
    """Analytic forward cost of the tubelet transformer on ``frames`` inputs."""
    n, d = config.n_patches, config.embed_dim
    dh = d // config.heads
    per_frame = matmul_flops(n, config.flat_dim, d)  # shared affine embed
    per_layer = 4 * matmul_flops(n, d, d)  # q, k, v, o projections
    per_layer += 2 * config.heads * matmul_flops(n, dh, n)  # scores and mix
    per_layer += matmul_flops(n, d, config.ffn_dim) + matmul_flops(n, config.ffn_dim, d)
    per_frame += config.layers * per_layer
    return frames * per_frame


def vgg_frontend_flops(config: Vgg21dConfig, frames):
    """Analytic forward cost of the (2+1)D stack on ``frames`` inputs."""
    total = 0
    side = config.frame_size
    c_in = config.channels
    for (mid, out), pool in zip(config.stages, config.pools):
        area = side * side
        total += conv_flops(area * mid, 9 * c_in)  # spatial [1,3,3]
        total += conv_flops(area * out, 3 * mid)  # temporal [3,1,1]
        side //= pool
        c_in = out
    total += matmul_flops(1, config.proj_in, config.out_dim)
    return frames * total


def count_flops(frontend_config, frames):
    if isinstance(frontend_config, VitFrontEndConfig):
        return vit_frontend_flops(frontend_config, frames)
    if isinstance(frontend_config, Vgg21dConfig):
        return vgg_frontend_flops(frontend_config, frames)
    raise TypeError(f"unknown front-end config {type(frontend_config).__name__}")


@dataclass
class BenchResult:
    mean_ms: float
    std_ms: float
    times_ms: list

    @property
    def repeats(self):
        return len(self.times_ms)


def bench_latency(fn, repeats=20, warmup=1):
    """Mean/stddev wall-clock of ``fn()`` over ``repeats`` timed runs.

    Warmup runs execute first and are excluded from the statistics.
    """
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    n = len(times)
    mean = sum(times) / n
    var = sum((t - mean) ** 2 for t in times) / n
    return BenchResult(mean, var**0.5, times)
