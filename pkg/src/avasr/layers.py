"""Shared transformer building blocks used by the front-end and the encoders."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def truncated_normal(rng, shape, std=0.02):
    """Normal draw clipped to two standard deviations, then scaled."""
    return np.clip(rng.standard_normal(shape), -2.0, 2.0) * std


def linear_params(rng, name, d_in, d_out, std=None):
    # fan-in scaling keeps the signal path at unit gain regardless of width;
    # a flat small std starves narrow desk-scale models of input signal
    if std is None:
        std = 1.0 / np.sqrt(d_in)
    return {
        f"{name}.w": Tensor(truncated_normal(rng, (d_in, d_out), std), requires_grad=True),
        f"{name}.b": Tensor(np.zeros(d_out), requires_grad=True),
    }


def norm_params(name, d):
    return {
        f"{name}.g": Tensor(np.ones(d), requires_grad=True),
        f"{name}.b": Tensor(np.zeros(d), requires_grad=True),
    }


def attention_params(rng, name, d, std=0.02):
    p = {}
    for proj in ("q", "k", "v", "o"):
        p.update(linear_params(rng, f"{name}.{proj}", d, d, std))
    return p


def linear(x, params, name):
    return T.matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def norm(x, params, name, eps=1e-6):
    return T.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"], eps)


def relative_bias(table, length, window):
    """Per-head logit biases from a clipped-offset table.

    ``table`` is (2*window+1, heads); offsets j-i are clipped to ±window.
    Returns a (heads, length, length) tensor.
    """
    offsets = np.arange(length)[None, :] - np.arange(length)[:, None]
    idx = np.clip(offsets, -window, window) + window
    return T.transpose(T.take(table, idx, axis=0), 2, 0, 1)


def local_mask_add(length, window):
    """Additive attention mask: 0 inside |i-j| <= window, -inf outside."""
    offsets = np.abs(np.arange(length)[None, :] - np.arange(length)[:, None])
    return np.where(offsets <= window, 0.0, -np.inf)


def multi_head_attention(x, params, name, heads, bias=None, mask_add=None, return_probs=False):
    """Self-attention over the middle axis of ``x`` (B, S, D).

    ``bias`` is an optional (heads, S, S) tensor added to the logits;
    ``mask_add`` an optional constant (S, S) array of 0/-inf.  Masked
    positions get exactly zero weight, so influence outside the window is
    blocked bit-exactly.
    """
    b, s, d = x.shape
    dh = d // heads

    def split(t):
        return T.reshape(T.transpose(T.reshape(t, b, s, heads, dh), 0, 2, 1, 3), b * heads, s, dh)

    q = split(linear(x, params, f"{name}.q"))
    k = split(linear(x, params, f"{name}.k"))
    v = split(linear(x, params, f"{name}.v"))
    scores = T.matmul(q, T.transpose(k, 0, 2, 1)) * (1.0 / np.sqrt(dh))
    if bias is not None or mask_add is not None:
        scores = T.reshape(scores, b, heads, s, s)
        if bias is not None:
            scores = scores + bias
        if mask_add is not None:
            scores = scores + Tensor(mask_add)
        scores = T.reshape(scores, b * heads, s, s)
    probs = T.softmax(scores, axis=-1)
    mixed = T.matmul(probs, v)
    mixed = T.reshape(T.transpose(T.reshape(mixed, b, heads, s, dh), 0, 2, 1, 3), b, s, d)
    out = linear(mixed, params, f"{name}.o")
    if return_probs:
        return out, probs
    return out


def feed_forward(x, params, name, activation=T.relu):
    return linear(activation(linear(x, params, f"{name}.w1")), params, f"{name}.w2")


def feed_forward_params(rng, name, d, ffn_dim, std=0.02):
    p = {}
    p.update(linear_params(rng, f"{name}.w1", d, ffn_dim, std))
    p.update(linear_params(rng, f"{name}.w2", ffn_dim, d, std))
    return p


def count_params(params):
    """Total scalar learnables in a parameter dict."""
    return int(sum(p.size for p in params.values()))
