import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avasr import tensor as T
from avasr.tensor import Tensor, grad_check
from avasr.transducer import (
    DecoderConfig,
    JointNet,
    PredictionNet,
    alignment_log_probs,
    corpus_wer,
    decode_ids,
    encode_text,
    greedy_decode,
    greedy_decode_rule,
    rnnt_loss,
    rnnt_loss_bruteforce,
    wer,
)


def uniform_lattice(t, u, v):
    return Tensor(np.full((t, u + 1, v + 1), -np.log(v + 1.0)))


def random_lattice(rng, t, u, v):
    logits = rng.normal(size=(t, u + 1, v + 1))
    return logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True)).reshape(t, u + 1, 1)


def small_decoder(hidden=8, embed=4, joint=6, vocab=3):
    cfg = DecoderConfig(embed_dim=embed, hidden=hidden, layers=2, joint_dim=joint, vocab_size=vocab)
    pred = PredictionNet(cfg)
    joint_net = JointNet(cfg, encoder_dim=5)
    rng = np.random.default_rng(0)
    return pred, pred.init_params(rng), joint_net, joint_net.init_params(rng)


def test_vocab_roundtrip():
    assert decode_ids(encode_text("hello a'b")) == "hello a'b"
    with pytest.raises(ValueError, match="outside"):
        encode_text("Hello")


def test_prediction_empty_labels_single_row():
    pred, pp, _, _ = small_decoder()
    out = pred.forward([], pp)
    assert out.shape == (1, 8)


def test_prediction_output_shape():
    pred, pp, _, _ = small_decoder()
    assert pred.forward([1, 2, 3], pp).shape == (4, 8)


def test_prediction_token_range_error():
    pred, pp, _, _ = small_decoder(vocab=3)
    with pytest.raises(ValueError, match="outside"):
        pred.forward([5], pp)


def test_prediction_gradient_vs_finite_differences():
    pred, pp, _, _ = small_decoder()
    names = ["embed", "lstm0.wx", "lstm1.wh", "lstm0.b"]

    def f(*leaves):
        trial = dict(pp)
        trial.update(dict(zip(names, leaves)))
        return T.tsum(T.tanh(pred.forward([1, 2, 1], trial)))

    assert grad_check(f, [pp[n] for n in names], max_entries=12, seed=0) < 1e-4


def test_joint_lattice_shape():
    _, _, joint_net, jp = small_decoder(vocab=3)
    h = Tensor(np.random.default_rng(1).normal(size=(2, 5)))
    g = Tensor(np.random.default_rng(2).normal(size=(2, 8)))
    assert joint_net.forward(h, g, jp).shape == (2, 2, 4)


def test_joint_zero_weights_uniform():
    _, _, joint_net, jp = small_decoder(vocab=3)
    jp = {k: Tensor(np.zeros_like(v.data)) for k, v in jp.items()}
    h = Tensor(np.ones((2, 5)))
    g = Tensor(np.ones((2, 8)))
    out = joint_net.forward(h, g, jp).data
    np.testing.assert_allclose(out, -np.log(4.0), atol=1e-15)


def test_joint_slices_normalize():
    _, _, joint_net, jp = small_decoder(vocab=3)
    rng = np.random.default_rng(3)
    h = Tensor(rng.normal(size=(3, 5)))
    g = Tensor(rng.normal(size=(2, 8)))
    probs = np.exp(joint_net.forward(h, g, jp).data).sum(axis=-1)
    np.testing.assert_allclose(probs, np.ones((3, 2)), atol=1e-12)


def test_rnnt_loss_single_blank():
    loss = rnnt_loss(uniform_lattice(1, 0, 2), [])
    assert loss.item() == pytest.approx(np.log(3.0), abs=1e-12)


def test_rnnt_loss_one_label_one_frame():
    loss = rnnt_loss(uniform_lattice(1, 1, 2), [1])
    assert loss.item() == pytest.approx(2.0 * np.log(3.0), abs=1e-12)


def test_rnnt_loss_two_frames_one_label():
    loss = rnnt_loss(uniform_lattice(2, 1, 2), [2])
    assert loss.item() == pytest.approx(np.log(27.0 / 2.0), abs=1e-12)


def test_rnnt_lattice_validation():
    with pytest.raises(ValueError, match="U\\+1"):
        rnnt_loss(uniform_lattice(2, 1, 2), [1, 2])
    with pytest.raises(ValueError, match="outside"):
        rnnt_loss(uniform_lattice(2, 1, 2), [3])


def test_path_count_is_binomial():
    lat = uniform_lattice(2, 2, 2)
    paths = alignment_log_probs(lat, [1, 2])
    assert len(paths) == 3 == math.comb(2 + 2 - 1, 2)
    for t in range(1, 5):
        for u in range(0, 4):
            n = len(alignment_log_probs(uniform_lattice(t, u, 2), [1] * u))
            assert n == math.comb(t + u - 1, u)


def test_bruteforce_size_guard():
    with pytest.raises(ValueError, match="too large"):
        rnnt_loss_bruteforce(uniform_lattice(12, 3, 2), [1, 1, 1])


def test_dp_equals_bruteforce_on_200_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(200):
        t = int(rng.integers(1, 5))
        u = int(rng.integers(0, 4))
        v = int(rng.integers(1, 4))
        labels = [int(x) for x in rng.integers(1, v + 1, size=u)]
        lat = random_lattice(rng, t, u, v)
        dp = rnnt_loss(Tensor(lat), labels).item()
        brute = rnnt_loss_bruteforce(lat, labels)
        assert abs(dp - brute) < 1e-9


def test_rnnt_loss_nonnegative_for_normalized_lattices():
    rng = np.random.default_rng(7)
    for _ in range(50):
        lat = random_lattice(rng, int(rng.integers(1, 5)), 2, 3)
        assert rnnt_loss(Tensor(lat), [1, 2]).item() >= -1e-9


def test_rnnt_gradient_2x1x3_lattice():
    rng = np.random.default_rng(8)
    lat = Tensor(random_lattice(rng, 2, 0, 2))
    assert grad_check(lambda x: rnnt_loss(x, []), [lat]) < 1e-4


def test_rnnt_gradient_random_lattices():
    rng = np.random.default_rng(9)
    for labels, (t, v) in [([1], (3, 2)), ([2, 1], (4, 3)), ([1, 1, 2], (4, 3))]:
        lat = Tensor(random_lattice(rng, t, len(labels), v))
        assert grad_check(lambda x: rnnt_loss(x, labels), [lat]) < 1e-4


def test_loss_invariant_to_relabeling_unused_symbols():
    rng = np.random.default_rng(10)
    lat = random_lattice(rng, 3, 2, 4)
    labels = [1, 1]  # symbols 2, 3, 4 unused
    base = rnnt_loss(Tensor(lat), labels).item()
    permuted = lat.copy()
    permuted[:, :, [2, 3, 4]] = lat[:, :, [4, 2, 3]]
    assert rnnt_loss(Tensor(permuted), labels).item() == base


def test_greedy_rule_trace():
    # argmax script: t=0 -> 'a' then blank; t=1 -> 'b' then blank; t=2 -> blank
    script = {(0, 0): 1, (0, 1): 0, (1, 1): 2, (1, 2): 0, (2, 2): 0}
    emitted = []

    def argmax_fn(t, state):
        return script[(t, len(emitted))]

    def advance_fn(state, k):
        emitted.append(k)
        return state

    assert greedy_decode_rule(3, argmax_fn, advance_fn) == [1, 2]


def test_greedy_rule_emission_cap():
    out = greedy_decode_rule(2, lambda t, s: 1, lambda s, k: s, max_symbols_per_step=4)
    assert out == [1] * 8


def test_greedy_always_blank_gives_empty():
    pred, pp, joint_net, jp = small_decoder(vocab=3)
    jp["out.b"] = Tensor(np.array([50.0, 0.0, 0.0, 0.0]))  # blank dominates
    h = np.random.default_rng(11).normal(size=(4, 5))
    assert greedy_decode(h, pred, pp, joint_net, jp) == []


def test_wer_hand_values():
    assert wer("a b c".split(), "a b c".split()) == 0.0
    assert wer("a b c".split(), "a x c".split()) == pytest.approx(1.0 / 3.0)
    assert wer(["a"], "a b c".split()) == 2.0
    with pytest.raises(ValueError, match="empty"):
        wer([], ["a"])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=6))
def test_wer_identity_is_zero(words):
    assert wer(words, list(words)) == 0.0


def test_corpus_wer_pools_errors():
    refs = [["a", "b"], ["c"]]
    hyps = [["a", "b"], ["x"]]
    assert corpus_wer(refs, hyps) == pytest.approx(1.0 / 3.0)
