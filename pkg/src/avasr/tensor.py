"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every learnable operation in the package is built from the primitives here.
A :class:`Tape` records one forward pass; since operations are recorded in
execution order, the record list is already topologically sorted and the
backward pass is a single reverse sweep that visits each node exactly once.

Tensors are treated as immutable after creation: operations return fresh
tensors and parameter updates swap in new instances instead of writing
through ``.data``.  Tapes are thread-local, so batch elements can run
forward/backward concurrently on independent tapes while sharing read-only
parameter tensors.
"""

from __future__ import annotations

import threading

import numpy as np

_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Operation record of a single forward pass, confined to one thread."""

    def __init__(self):
        self._records = []  # (output tensor, backward closure), creation order

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def _record(self, out, backward):
        out.node_id = len(self._records)
        self._records.append((out, backward))

    def gradients(self, loss, wrt):
        """Gradients of scalar ``loss`` w.r.t. each tensor in ``wrt``.

        Returns one float64 array per requested tensor; tensors the loss does
        not depend on get zeros.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}

        def accum(t, g):
            if not t.requires_grad:
                return
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

        for out, backward in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            backward(g, accum)
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


class Tensor:
    """N-dimensional float64 array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return narrow(self, index)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward):
    tape = _active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        tape._record(out, backward)
    return out


def _unbroadcast(g, shape):
    """Sum a gradient over the axes numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, accum):
        accum(a, _unbroadcast(g, a.shape))
        accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, accum):
        accum(a, _unbroadcast(g, a.shape))
        accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, accum):
        accum(a, _unbroadcast(g * b.data, a.shape))
        accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g, accum):
        accum(a, _unbroadcast(g / b.data, a.shape))
        accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Matrix product for 2-d operands, with optional leading batch axis.

    Supported shapes: (m,k)@(k,n), (B,m,k)@(B,k,n) and (B,m,k)@(k,n); the
    last form shares ``b`` across the batch and sums its gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}"
        )
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ValueError(
            f"matmul: batch extents disagree for shapes {a.shape} and {b.shape}"
        )

    if a.ndim == 3 and b.ndim == 2:
        # collapse the batch axis: one large GEMM instead of a strided loop
        batch, m, k = a.shape
        n = b.shape[1]
        out_data = (a.data.reshape(batch * m, k) @ b.data).reshape(batch, m, n)

        def backward(g, accum):
            g2 = g.reshape(batch * m, n)
            accum(a, (g2 @ b.data.T).reshape(batch, m, k))
            accum(b, a.data.reshape(batch * m, k).T @ g2)

        return _make(out_data, (a, b), backward)

    def backward(g, accum):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        accum(a, g @ bt)
        accum(b, at @ g)

    return _make(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(t, *shape):
    t = as_tensor(t)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = t.shape

    def backward(g, accum):
        accum(t, g.reshape(old))

    return _make(t.data.reshape(shape), (t,), backward)


def transpose(t, *axes):
    t = as_tensor(t)
    if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    if not axes:
        axes = tuple(reversed(range(t.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g, accum):
        accum(t, g.transpose(inverse))

    return _make(t.data.transpose(axes), (t,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, accum):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def narrow(t, index):
    """Basic slicing/integer indexing; gradient scatters into zeros."""
    t = as_tensor(t)

    def backward(g, accum):
        full = np.zeros_like(t.data)
        full[index] = g
        accum(t, full)

    return _make(t.data[index], (t,), backward)


def take(t, indices, axis=0):
    """Gather along ``axis`` with an integer array (repeats allowed)."""
    t = as_tensor(t)
    indices = np.asarray(indices)

    def backward(g, accum):
        full = np.zeros_like(t.data)
        if axis == 0:
            np.add.at(full, indices, g)
        else:
            moved = np.moveaxis(full, axis, 0)
            np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        accum(t, full)

    return _make(np.take(t.data, indices, axis=axis), (t,), backward)


def pad(t, pad_width):
    """Zero padding; ``pad_width`` is the numpy (before, after) per-axis list."""
    t = as_tensor(t)
    window = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, t.shape))

    def backward(g, accum):
        accum(t, g[window])

    return _make(np.pad(t.data, pad_width), (t,), backward)


# ---------------------------------------------------------------------------
# reductions

def tsum(t, axis=None, keepdims=False):
    t = as_tensor(t)

    def backward(g, accum):
        if axis is None:
            accum(t, np.broadcast_to(g, t.shape).copy())
        else:
            gk = g if keepdims else np.expand_dims(g, axis)
            accum(t, np.broadcast_to(gk, t.shape).copy())

    return _make(t.data.sum(axis=axis, keepdims=keepdims), (t,), backward)


def tmean(t, axis=None, keepdims=False):
    t = as_tensor(t)
    count = t.size if axis is None else np.prod([t.shape[a] for a in np.atleast_1d(axis)])

    def backward(g, accum):
        if axis is None:
            accum(t, np.broadcast_to(g / count, t.shape).copy())
        else:
            gk = g if keepdims else np.expand_dims(g, axis)
            accum(t, np.broadcast_to(gk / count, t.shape).copy())

    return _make(t.data.mean(axis=axis, keepdims=keepdims), (t,), backward)


def tmax(t, axis=-1):
    """Max along one axis; gradient routes to the first max position."""
    t = as_tensor(t)
    idx = np.argmax(t.data, axis=axis)

    def backward(g, accum):
        full = np.zeros_like(t.data)
        np.put_along_axis(
            full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
        )
        accum(t, full)

    return _make(np.max(t.data, axis=axis), (t,), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities

def exp(t):
    t = as_tensor(t)
    out_data = np.exp(t.data)

    def backward(g, accum):
        accum(t, g * out_data)

    return _make(out_data, (t,), backward)


def log(t):
    t = as_tensor(t)

    def backward(g, accum):
        accum(t, g / t.data)

    return _make(np.log(t.data), (t,), backward)


def tanh(t):
    t = as_tensor(t)
    out_data = np.tanh(t.data)

    def backward(g, accum):
        accum(t, g * (1.0 - out_data * out_data))

    return _make(out_data, (t,), backward)


def sigmoid(t):
    t = as_tensor(t)
    out_data = 1.0 / (1.0 + np.exp(-t.data))

    def backward(g, accum):
        accum(t, g * out_data * (1.0 - out_data))

    return _make(out_data, (t,), backward)


def relu(t):
    t = as_tensor(t)

    def backward(g, accum):
        accum(t, g * (t.data > 0))

    return _make(np.maximum(t.data, 0.0), (t,), backward)


def swish(t):
    """x * sigmoid(x), fused."""
    t = as_tensor(t)
    s = 1.0 / (1.0 + np.exp(-t.data))
    out_data = t.data * s

    def backward(g, accum):
        accum(t, g * (s + out_data * (1.0 - s)))

    return _make(out_data, (t,), backward)


# ---------------------------------------------------------------------------
# normalizations and log-space reductions

def softmax(t, axis=-1):
    """Softmax along ``axis``; -inf entries get exactly zero probability.

    The gradient uses the fused Jacobian-vector form rather than a
    materialized Jacobian.
    """
    t = as_tensor(t)
    m = np.max(t.data, axis=axis, keepdims=True)
    e = np.exp(t.data - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g, accum):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        accum(t, out_data * (g - dot))

    return _make(out_data, (t,), backward)


def log_softmax(t, axis=-1):
    t = as_tensor(t)
    m = np.max(t.data, axis=axis, keepdims=True)
    shifted = t.data - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g, accum):
        accum(t, g - np.exp(out_data) * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (t,), backward)


def logsumexp(t, axis=-1, keepdims=False):
    """Max-subtracted log of summed exponentials along ``axis``."""
    t = as_tensor(t)
    if t.shape[axis] == 0:
        raise ValueError(f"logsumexp over empty axis {axis} of shape {t.shape}")
    m = np.max(t.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf slice stays -inf without nan
    e = np.exp(t.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = m + np.log(s)
    soft = e / s

    def backward(g, accum):
        gk = g if keepdims else np.expand_dims(g, axis)
        accum(t, gk * soft)

    return _make(out_data if keepdims else np.squeeze(out_data, axis=axis), (t,), backward)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over an empty last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match last axis {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g, accum):
        lead = tuple(range(g.ndim - 1))
        accum(gain, (g * xhat).sum(axis=lead))
        accum(bias, g.sum(axis=lead))
        gx = g * gain.data
        accum(
            x,
            inv
            * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            ),
        )

    return _make(out_data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# convolutions (fused: one backward closure, one scatter buffer each)

def conv_spatial3(x, w, b):
    """3x3 spatial convolution over (T, H, W, Cin) with zero same-padding.

    ``w`` has shape (3, 3, Cin, Cout); temporal extent is 1 by construction.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    t, h, wd, cin = x.shape
    if w.shape[:3] != (3, 3, cin):
        raise ValueError(f"conv_spatial3: weight shape {w.shape} does not match input {x.shape}")
    cout = w.shape[3]
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out_data = np.zeros((t * h * wd, cout))
    for dy in range(3):
        for dx in range(3):
            patch = xp[:, dy : dy + h, dx : dx + wd, :].reshape(-1, cin)
            out_data += patch @ w.data[dy, dx]
    out_data = out_data.reshape(t, h, wd, cout) + b.data

    def backward(g, accum):
        g2 = g.reshape(-1, cout)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for dy in range(3):
            for dx in range(3):
                patch = xp[:, dy : dy + h, dx : dx + wd, :].reshape(-1, cin)
                gw[dy, dx] = patch.T @ g2
                gxp[:, dy : dy + h, dx : dx + wd, :] += (g2 @ w.data[dy, dx].T).reshape(t, h, wd, cin)
        accum(x, gxp[:, 1 : h + 1, 1 : wd + 1, :])
        accum(w, gw)
        accum(b, g2.sum(axis=0))

    return _make(out_data, (x, w, b), backward)


def conv_temporal3(x, w, b):
    """Temporal convolution of extent 3 over (T, H, W, Cin), same-padded.

    ``w`` has shape (3, Cin, Cout); spatial extent is 1x1 by construction.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    t, h, wd, cin = x.shape
    if w.shape[:2] != (3, cin):
        raise ValueError(f"conv_temporal3: weight shape {w.shape} does not match input {x.shape}")
    cout = w.shape[2]
    xp = np.pad(x.data, ((1, 1), (0, 0), (0, 0), (0, 0)))
    out_data = np.zeros((t, h * wd, cout))
    for dt in range(3):
        out_data += xp[dt : dt + t].reshape(t, -1, cin) @ w.data[dt]
    out_data = out_data.reshape(t, h, wd, cout) + b.data

    def backward(g, accum):
        g3 = g.reshape(t, -1, cout)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for dt in range(3):
            patch = xp[dt : dt + t].reshape(-1, cin)
            gw[dt] = patch.T @ g3.reshape(-1, cout)
            gxp[dt : dt + t] += (g3 @ w.data[dt].T).reshape(t, h, wd, cin)
        accum(x, gxp[1 : t + 1])
        accum(w, gw)
        accum(b, g.reshape(-1, cout).sum(axis=0))

    return _make(out_data, (x, w, b), backward)


def conv_depthwise(x, w):
    """Per-channel temporal convolution over (T, D).

    ``w`` has shape (K, D); even kernels pad K//2 left and K//2 - 1 right so
    the sequence length is preserved.
    """
    x, w = as_tensor(x), as_tensor(w)
    t, d = x.shape
    k = w.shape[0]
    if w.shape != (k, d):
        raise ValueError(f"conv_depthwise: weight shape {w.shape} does not match input {x.shape}")
    left = k // 2
    right = k - 1 - left
    xp = np.pad(x.data, ((left, right), (0, 0)))
    out_data = np.zeros((t, d))
    for tap in range(k):
        out_data += xp[tap : tap + t] * w.data[tap]

    def backward(g, accum):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for tap in range(k):
            gxp[tap : tap + t] += g * w.data[tap]
            gw[tap] = (g * xp[tap : tap + t]).sum(axis=0)
        accum(x, gxp[left : left + t])
        accum(w, gw)

    return _make(out_data, (x, w), backward)


def window_slot_sum(slots, half):
    """Fold per-frame depth-slot values over a clamped sliding window.

    ``slots`` is (T, ..., depth, D); output row t is the sum over d of
    slots[clip(t - half + d), ..., d, :].  This is the temporal fold of the
    tubelet embed, kept as one op so the backward pass is a handful of
    vectorized slice additions instead of per-slot scatters.
    """
    slots = as_tensor(slots)
    t_len = slots.shape[0]
    depth = slots.shape[-2]
    out_shape = slots.shape[:-2] + slots.shape[-1:]
    def bounds(off):
        # rows whose un-clamped source t + off stays inside [0, t_len)
        t0 = max(0, -off)
        t1 = max(t0, min(t_len, t_len - off))
        return t0, t1

    out_data = np.zeros(out_shape)
    for d in range(depth):
        off = d - half
        t0, t1 = bounds(off)
        out_data[t0:t1] += slots.data[t0 + off : t1 + off, ..., d, :]
        if t0 > 0:
            out_data[:t0] += slots.data[0, ..., d, :]
        if t1 < t_len:
            out_data[t1:] += slots.data[t_len - 1, ..., d, :]

    def backward(g, accum):
        gz = np.zeros_like(slots.data)
        for d in range(depth):
            off = d - half
            t0, t1 = bounds(off)
            gz[t0 + off : t1 + off, ..., d, :] += g[t0:t1]
            if t0 > 0:
                gz[0, ..., d, :] += g[:t0].sum(axis=0)
            if t1 < t_len:
                gz[t_len - 1, ..., d, :] += g[t1:].sum(axis=0)
        accum(slots, gz)

    return _make(out_data, (slots,), backward)


def max_pool_spatial(x, p):
    """Non-overlapping p x p spatial max pooling over (T, H, W, C)."""
    t, h, w, c = x.shape
    if h % p or w % p:
        raise ValueError(f"pool size {p} does not divide spatial extent {h}x{w}")
    blocks = reshape(x, t, h // p, p, w // p, p, c)
    blocks = transpose(blocks, 0, 1, 3, 5, 2, 4)
    blocks = reshape(blocks, t, h // p, w // p, c, p * p)
    return tmax(blocks, axis=-1)


# ---------------------------------------------------------------------------
# verification harness

def grad_check(f, inputs, eps=1e-5, max_entries=None, seed=0):
    """Worst relative error between tape gradients and central differences.

    ``f`` must map the given tensors to a scalar tensor.  Every element of
    every input is probed unless ``max_entries`` caps the count per input
    (sampled with a fixed-seed rng), which keeps large composite checks
    inside a time budget.
    """
    leaves = [Tensor(np.array(as_tensor(x).data, copy=True), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = f(*leaves)
        base = float(out.data)
        if not np.isfinite(base):
            raise FloatingPointError(f"f(inputs) is not finite: {base}")
        grads = tape.gradients(out, leaves)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for pos, (leaf, grad) in enumerate(zip(leaves, grads)):
        flat = leaf.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            picks = rng.choice(n, size=max_entries, replace=False)
        else:
            picks = range(n)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(*leaves).data)
            flat[i] = orig - eps
            fm = float(f(*leaves).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("f(perturbed inputs) is not finite")
            numeric = (fp - fm) / (2.0 * eps)
            analytic = grad.reshape(-1)[i]
            denom = max(abs(analytic), abs(numeric), 1e-6)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
