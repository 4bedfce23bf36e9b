"""Learning-rate schedules and the Adam optimizer.

All three published schedules share one piecewise form: linear warmup to a
peak, optional plateau, then exponential annealing to a final rate.  The
segments are continuous at every breakpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class LrSchedule:
    kind: str = "transformer"
    peak: float = 1e-4
    warmup_iters: int = 30_000
    plateau_end: int = 200_000
    final_lr: float = 1e-6
    total_iters: int = 300_000

    def rate(self, iteration):
        i = float(iteration)
        if i < 0:
            raise ValueError("iteration must be >= 0")
        if i < self.warmup_iters:
            return self.peak * (i / self.warmup_iters)
        if i <= self.plateau_end:
            return self.peak
        if i >= self.total_iters:
            return self.final_lr
        frac = (i - self.plateau_end) / (self.total_iters - self.plateau_end)
        return self.peak * (self.final_lr / self.peak) ** frac

    def __call__(self, iteration):
        return self.rate(iteration)


def transformer_schedule():
    """Warmup to 1e-4 over 30k, hold to 200k, anneal to 1e-6 by 300k."""
    return LrSchedule("transformer", 1e-4, 30_000, 200_000, 1e-6, 300_000)


def conformer_schedule():
    """Warmup to 1.7e-2 over 15k, then exponential decay; the decay constant
    is solved from the endpoint lr(300k) = 1e-6."""
    return LrSchedule("conformer", 1.7e-2, 15_000, 15_000, 1e-6, 300_000)


def finetune_schedule():
    """Warmup to 1e-5 over 200 steps, then held constant."""
    return LrSchedule("finetune", 1e-5, 200, 10_000, 1e-5, 10_000)


def lr_transformer(iteration):
    return transformer_schedule().rate(iteration)


def lr_conformer(iteration):
    return conformer_schedule().rate(iteration)


def lr_finetune(iteration):
    return finetune_schedule().rate(iteration)


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Scale all gradients down to a global norm of ``max_norm`` if exceeded."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    ``step`` is functional: it returns a fresh parameter dict so tensors stay
    immutable, and raises on non-finite gradients naming the parameter.
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        new_params = {}
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            new_params[name] = Tensor(
                p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps), requires_grad=True
            )
        return new_params

    def state_tensors(self):
        """Optimizer state as named arrays (for checkpoints)."""
        out = {"adam.t": np.array([float(self.t)])}
        for name, m in self.m.items():
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors):
        self.t = int(tensors["adam.t"][0])
        self.m = {}
        self.v = {}
        for key, value in tensors.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m.") :]] = value
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v.") :]] = value
