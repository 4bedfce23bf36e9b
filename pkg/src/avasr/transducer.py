"""RNN-T decoder: prediction network, joint, transducer loss, greedy decode.

The loss is the negative log of the total probability over all monotonic
alignments, computed with the forward DP in log space.  A brute-force path
enumeration serves as an independent oracle for small instances.  Output is
character-level: lowercase a-z, space and apostrophe, with blank id 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import tensor as T
from .tensor import Tensor, as_tensor, _make

VOCAB = "abcdefghijklmnopqrstuvwxyz '"
BLANK_ID = 0
VOCAB_SIZE = len(VOCAB)  # excludes blank

_CHAR_TO_ID = {c: i + 1 for i, c in enumerate(VOCAB)}


def encode_text(text):
    """Transcript string to label ids in [1, V]."""
    try:
        return [_CHAR_TO_ID[c] for c in text]
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} is outside the vocabulary") from exc


def decode_ids(ids):
    return "".join(VOCAB[i - 1] for i in ids)


@dataclass
class DecoderConfig:
    embed_dim: int = 128
    hidden: int = 2048
    layers: int = 2
    joint_dim: int = 640
    vocab_size: int = VOCAB_SIZE  # excluding blank


class PredictionNet:
    """Stacked LSTM over the label history; row u encodes the length-u prefix.

    The start state is the zero LSTM state fed with the learned blank
    embedding, so the output always has U+1 rows.
    """

    def __init__(self, config: DecoderConfig | None = None):
        self.config = config or DecoderConfig()

    def init_params(self, rng):
        cfg = self.config
        params = {
            "embed": Tensor(
                L.truncated_normal(rng, (cfg.vocab_size + 1, cfg.embed_dim)), requires_grad=True
            )
        }
        d_in = cfg.embed_dim
        for i in range(cfg.layers):
            params[f"lstm{i}.wx"] = Tensor(
                L.truncated_normal(rng, (d_in, 4 * cfg.hidden), std=np.sqrt(1.0 / d_in)),
                requires_grad=True,
            )
            params[f"lstm{i}.wh"] = Tensor(
                L.truncated_normal(rng, (cfg.hidden, 4 * cfg.hidden), std=np.sqrt(1.0 / cfg.hidden)),
                requires_grad=True,
            )
            bias = np.zeros(4 * cfg.hidden)
            bias[cfg.hidden : 2 * cfg.hidden] = 1.0  # forget gate open at init
            params[f"lstm{i}.b"] = Tensor(bias, requires_grad=True)
            d_in = cfg.hidden
        return params

    def initial_state(self):
        h = self.config.hidden
        return [(Tensor(np.zeros((1, h))), Tensor(np.zeros((1, h)))) for _ in range(self.config.layers)]

    def step(self, token_id, state, params):
        """Advance the stack by one token; returns (output row, new state)."""
        cfg = self.config
        if not 0 <= token_id <= cfg.vocab_size:
            raise ValueError(f"token id {token_id} outside [0, {cfg.vocab_size}]")
        x = T.take(params["embed"], np.array([token_id]), axis=0)
        new_state = []
        for i, (h_prev, c_prev) in enumerate(state):
            gates = (
                T.matmul(x, params[f"lstm{i}.wx"])
                + T.matmul(h_prev, params[f"lstm{i}.wh"])
                + params[f"lstm{i}.b"]
            )
            hd = cfg.hidden
            i_g = T.sigmoid(gates[:, :hd])
            f_g = T.sigmoid(gates[:, hd : 2 * hd])
            g_g = T.tanh(gates[:, 2 * hd : 3 * hd])
            o_g = T.sigmoid(gates[:, 3 * hd :])
            c = f_g * c_prev + i_g * g_g
            h = o_g * T.tanh(c)
            new_state.append((h, c))
            x = h
        return x, new_state

    def forward(self, labels, params):
        """Encode a label sequence into (U+1, hidden) prefix states."""
        state = self.initial_state()
        rows = []
        out, state = self.step(BLANK_ID, state, params)
        rows.append(out)
        for token in labels:
            out, state = self.step(int(token), state, params)
            rows.append(out)
        return T.concat(rows, axis=0)


class JointNet:
    """Additive joint: log-softmax over proj(tanh(Wh h_t + Wg g_u))."""

    def __init__(self, config: DecoderConfig, encoder_dim):
        self.config = config
        self.encoder_dim = encoder_dim

    def init_params(self, rng):
        cfg = self.config
        params = {}
        params.update(L.linear_params(rng, "enc", self.encoder_dim, cfg.joint_dim))
        params.update(L.linear_params(rng, "pred", cfg.hidden, cfg.joint_dim))
        params.update(L.linear_params(rng, "out", cfg.joint_dim, cfg.vocab_size + 1))
        return params

    def forward(self, h, g, params):
        """Encoder rows (T, d1) x prediction rows (U+1, d2) -> (T, U+1, V+1)
        normalized log-probabilities."""
        cfg = self.config
        t_len = h.shape[0]
        u_len = g.shape[0]
        he = L.linear(h, params, "enc")
        ge = L.linear(g, params, "pred")
        z = T.tanh(T.reshape(he, t_len, 1, cfg.joint_dim) + T.reshape(ge, 1, u_len, cfg.joint_dim))
        logits = L.linear(T.reshape(z, t_len * u_len, cfg.joint_dim), params, "out")
        return T.reshape(T.log_softmax(logits, axis=-1), t_len, u_len, cfg.vocab_size + 1)


def _validate_lattice(lattice, labels):
    lp = lattice.data if isinstance(lattice, Tensor) else np.asarray(lattice)
    if lp.ndim != 3:
        raise ValueError(f"lattice must be (T, U+1, V+1), got shape {lp.shape}")
    t_len, u_rows, n_sym = lp.shape
    if t_len < 1:
        raise ValueError("lattice needs at least one timestep")
    if u_rows != len(labels) + 1:
        raise ValueError(
            f"lattice label axis is {u_rows}, expected U+1 = {len(labels) + 1}"
        )
    for tok in labels:
        if not 1 <= int(tok) <= n_sym - 1:
            raise ValueError(f"label id {tok} outside [1, {n_sym - 1}]")
    return lp, t_len, len(labels)


def rnnt_loss(lattice, labels):
    """Transducer loss: -log total alignment probability, differentiable.

    Forward-backward DP in log space; the gradient w.r.t. the lattice is the
    standard occupancy form exp(alpha + transition + beta - logZ).
    """
    lattice = as_tensor(lattice)
    lp, t_len, u_len = _validate_lattice(lattice, labels)
    labels = [int(x) for x in labels]
    blank = lp[:, :, BLANK_ID]  # (T, U+1)
    if u_len:
        lab = lp[:, np.arange(u_len), labels]  # (T, U): emit labels[u] from (t, u)
    else:
        lab = np.zeros((t_len, 0))

    alpha = np.full((t_len, u_len + 1), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(1, t_len):
        alpha[t, 0] = alpha[t - 1, 0] + blank[t - 1, 0]
    for u in range(1, u_len + 1):
        alpha[0, u] = alpha[0, u - 1] + lab[0, u - 1]
    for t in range(1, t_len):
        for u in range(1, u_len + 1):
            alpha[t, u] = np.logaddexp(
                alpha[t - 1, u] + blank[t - 1, u], alpha[t, u - 1] + lab[t, u - 1]
            )

    # beta[t, u]: log-probability of completing from (t, u); the virtual exit
    # cell beta[T, U] = 0 closes the recursion
    beta = np.full((t_len + 1, u_len + 1), -np.inf)
    beta[t_len, u_len] = 0.0
    for t in range(t_len - 1, -1, -1):
        for u in range(u_len, -1, -1):
            stay = blank[t, u] + beta[t + 1, u]
            beta[t, u] = np.logaddexp(stay, lab[t, u] + beta[t, u + 1]) if u < u_len else stay

    log_z = beta[0, 0]
    loss = -log_z

    def backward(g, accum):
        grad = np.zeros_like(lp)
        grad[:, :, BLANK_ID] = -np.exp(alpha + blank + beta[1:, :] - log_z)
        if u_len:
            lab_grad = -np.exp(alpha[:, :-1] + lab + beta[:t_len, 1:] - log_z)
            np.add.at(grad, (slice(None), np.arange(u_len), labels), lab_grad)
        accum(lattice, float(g) * grad)

    out = _make(np.float64(loss), (lattice,), backward)
    return out


def alignment_log_probs(lattice, labels):
    """Log-probability of every monotonic alignment, by explicit enumeration.

    A path interleaves T blanks and U labels, the last event being the blank
    that consumes frame T-1 at u = U.  Test oracle; refuses large instances.
    """
    lp, t_len, u_len = _validate_lattice(lattice, labels)
    if t_len + u_len > 14:
        raise ValueError(f"instance too large to enumerate: T + U = {t_len + u_len}")
    labels = [int(x) for x in labels]
    blank = lp[:, :, BLANK_ID]
    paths = []

    def walk(t, u, acc):
        if t == t_len - 1 and u == u_len:
            paths.append(acc + blank[t, u])
            return
        if t < t_len - 1:
            walk(t + 1, u, acc + blank[t, u])
        if u < u_len:
            walk(t, u + 1, acc + lp[t, u, labels[u]])

    walk(0, 0, 0.0)
    return np.array(paths)


def rnnt_loss_bruteforce(lattice, labels):
    """Oracle loss via alignment enumeration; must match the DP exactly."""
    paths = alignment_log_probs(lattice, labels)
    return -np.logaddexp.reduce(paths)


def greedy_decode_rule(t_len, argmax_fn, advance_fn, max_symbols_per_step=10):
    """The greedy transducer rule, decoupled from any network.

    ``argmax_fn(t, dec_state)`` returns the best symbol id at time t given a
    decoder state; ``advance_fn(dec_state, symbol)`` consumes a non-blank
    emission.  Blank advances time; the per-step emission cap prevents
    livelock.
    """
    state = None
    out = []
    for t in range(t_len):
        for _ in range(max_symbols_per_step):
            k = int(argmax_fn(t, state))
            if k == BLANK_ID:
                break
            out.append(k)
            state = advance_fn(state, k)
    return out


def greedy_decode(h, pred_net: PredictionNet, pred_params, joint: JointNet, joint_params,
                  max_symbols_per_step=10):
    """Best-symbol decoding: emit while non-blank (capped), else advance time."""
    h_data = h.data if isinstance(h, Tensor) else np.asarray(h)
    we, be = joint_params["enc.w"].data, joint_params["enc.b"].data
    wp, bp = joint_params["pred.w"].data, joint_params["pred.b"].data
    wo, bo = joint_params["out.w"].data, joint_params["out.b"].data
    enc_proj = h_data @ we + be

    start_row, start_state = pred_net.step(BLANK_ID, pred_net.initial_state(), pred_params)

    def argmax_fn(t, dec):
        g_proj = (dec[0] if dec else start_row).data @ wp + bp
        logits = np.tanh(enc_proj[t] + g_proj[0]) @ wo + bo
        return np.argmax(logits)

    def advance_fn(dec, symbol):
        row, state = pred_net.step(symbol, (dec[1] if dec else start_state), pred_params)
        return (row, state)

    return greedy_decode_rule(h_data.shape[0], argmax_fn, advance_fn, max_symbols_per_step)


def edit_distance(ref, hyp):
    """Levenshtein distance between two token sequences."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[len(hyp)]


def wer(ref_words, hyp_words):
    """Word error rate: edit distance over |ref|; may exceed 1."""
    if len(ref_words) == 0:
        raise ValueError("WER is undefined for an empty reference")
    return edit_distance(list(ref_words), list(hyp_words)) / len(ref_words)


def corpus_wer(refs, hyps):
    """Corpus-level WER: total edit distance over total reference words."""
    total_ref = sum(len(r) for r in refs)
    if total_ref == 0:
        raise ValueError("WER is undefined for an empty reference corpus")
    total_err = sum(edit_distance(list(r), list(h)) for r, h in zip(refs, hyps))
    return total_err / total_ref
