import numpy as np
import pytest

from avasr import tensor as T
from avasr.encoder import (
    AlignmentError,
    ConformerEncoder,
    EncoderConfig,
    TransformerEncoder,
    fuse,
    local_attention_mask,
)
from avasr.tensor import Tensor, grad_check


def small_transformer(input_dim=10, window=4, layers=2, dim=32):
    cfg = EncoderConfig(
        kind="transformer", layers=layers, model_dim=dim, heads=4, attn_window=window, ffn_dim=64
    )
    enc = TransformerEncoder(cfg, input_dim=input_dim)
    return enc, enc.init_params(np.random.default_rng(0))


def small_conformer(input_dim=10, window=2, layers=1, dim=16, kernel=4):
    cfg = EncoderConfig(
        kind="conformer",
        layers=layers,
        model_dim=dim,
        heads=4,
        attn_window=window,
        conv_kernel=kernel,
        ffn_dim=32,
    )
    enc = ConformerEncoder(cfg, input_dim=input_dim)
    return enc, enc.init_params(np.random.default_rng(1))


def test_fuse_produces_752_rows():
    out = fuse(np.zeros((32, 240)), np.zeros((32, 512)))
    assert out.shape == (32, 752)


def test_fuse_video_only_passthrough():
    v = np.random.default_rng(2).normal(size=(32, 512))
    out = fuse(None, v)
    assert out.shape == (32, 512)
    np.testing.assert_array_equal(out.data, v)


def test_fuse_mismatch_reports_both_counts():
    with pytest.raises(AlignmentError, match="31.*32"):
        fuse(np.zeros((31, 240)), np.zeros((32, 512)))


def test_local_attention_mask_band():
    m = local_attention_mask(5, 1)
    expected = np.eye(5, dtype=bool) | np.eye(5, k=1, dtype=bool) | np.eye(5, k=-1, dtype=bool)
    np.testing.assert_array_equal(m, expected)


def test_local_attention_mask_degenerate_all_true():
    assert local_attention_mask(6, 5).all()
    assert local_attention_mask(6, 99).all()


def test_local_attention_mask_boundary_row():
    m = local_attention_mask(300, 100)
    assert m[0, :101].all() and not m[0, 101:].any()


def test_transformer_output_shape():
    enc, params = small_transformer()
    for t in (1, 5, 11):
        assert enc.forward(np.random.default_rng(t).normal(size=(t, 10)), params).shape == (t, 32)


def test_transformer_input_dim_check():
    enc, params = small_transformer()
    with pytest.raises(ValueError, match="10"):
        enc.forward(np.zeros((4, 7)), params)


def test_attention_rows_are_distributions():
    enc, params = small_transformer()
    # give the attention something nontrivial to normalize
    rng = np.random.default_rng(3)
    for name in list(params):
        if name.endswith(".w"):
            params[name] = Tensor(rng.normal(size=params[name].shape) * 0.2)
    _, probs = enc.forward(rng.normal(size=(9, 10)), params, return_probs=True)
    for p in probs:
        sums = p.data.sum(axis=-1)
        np.testing.assert_allclose(sums, np.ones_like(sums), atol=1e-10)
        inside = local_attention_mask(9, enc.config.attn_window)
        assert np.all(p.data[:, ~inside] == 0.0)


def test_transformer_shift_equivariance_interior():
    enc, params = small_transformer(window=3, layers=2)
    rng = np.random.default_rng(4)
    t_len, k = 40, 3
    x = np.zeros((t_len, 10))
    x[10:25] = rng.normal(size=(15, 10))
    shifted = np.roll(x, k, axis=0)
    out = enc.forward(x, params).data
    out_shifted = enc.forward(shifted, params).data
    reach = 2 * enc.config.attn_window  # two layers of windowed attention
    for i in range(reach, t_len - reach - k):
        np.testing.assert_allclose(out_shifted[i + k], out[i], atol=1e-8)


def test_transformer_window_zero_is_rowwise():
    enc, params = small_transformer(window=0, layers=1)
    for name in list(params):
        if ".ffn." in name:
            params[name] = Tensor(np.zeros_like(params[name].data))
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 10))
    base = enc.forward(x, params).data
    bumped = x.copy()
    bumped[2] += 1.0
    out = enc.forward(bumped, params).data
    changed = np.any(out != base, axis=1)
    np.testing.assert_array_equal(changed, np.arange(6) == 2)


def test_single_layer_masking_blocks_influence_exactly():
    enc, params = small_transformer(window=4, layers=1)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(16, 10))
    base = enc.forward(x, params).data
    j = 12
    bumped = x.copy()
    bumped[j] += 3.0
    out = enc.forward(bumped, params).data
    for i in range(16):
        if abs(i - j) > enc.config.attn_window:
            np.testing.assert_array_equal(out[i], base[i])  # exact zero difference
    assert np.any(out[j] != base[j])


def test_single_attention_layer_ignores_rows_outside_window():
    enc, params = small_transformer(window=4, layers=1)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(16, 10))
    i = 8
    zeroed = x.copy()
    keep = np.abs(np.arange(16) - i) <= enc.config.attn_window
    zeroed[~keep] = 0.0
    a = enc.forward(x, params).data[i]
    b = enc.forward(zeroed, params).data[i]
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_transformer_grad_check_reduced_scale():
    enc, params = small_transformer(window=2, layers=2, dim=32)
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(5, 10)))
    names = ["input.w", "rel_pos", "layer0.attn.q.w", "layer1.ffn.w2.w", "out_ln.g"]

    def f(inp, *leaves):
        trial = dict(params)
        trial.update(dict(zip(names, leaves)))
        return T.tsum(T.tanh(enc.forward(inp, trial)))

    err = grad_check(f, [x] + [params[n] for n in names], max_entries=10, seed=0)
    assert err < 1e-4


def test_conformer_output_shape():
    enc, params = small_conformer()
    assert enc.forward(np.random.default_rng(9).normal(size=(7, 10)), params).shape == (7, 16)


def test_conformer_depthwise_kernel_audit():
    cfg = EncoderConfig(kind="conformer", layers=2, model_dim=512, heads=8, conv_kernel=32)
    enc = ConformerEncoder(cfg, input_dim=752)
    params = enc.init_params(np.random.default_rng(10))
    for i in range(2):
        assert params[f"layer{i}.conv_dw"].shape == (32, 512)
        assert params[f"layer{i}.conv_dw"].size == 32 * 512


def test_conformer_receptive_field_bound():
    enc, params = small_conformer(window=2, kernel=4, layers=1)
    rng = np.random.default_rng(11)
    x = rng.normal(size=(20, 10))
    base = enc.forward(x, params).data
    j = 10
    bumped = x.copy()
    bumped[j] += 1.0
    out = enc.forward(bumped, params).data
    bound = enc.config.attn_window + enc.config.conv_kernel // 2
    changed = np.where(np.any(out != base, axis=1))[0]
    assert np.all(np.abs(changed - j) <= bound)
    assert j in changed


def test_conformer_grad_check_reduced_scale():
    cfg = EncoderConfig(
        kind="conformer", layers=2, model_dim=32, heads=4, attn_window=2, conv_kernel=4, ffn_dim=48
    )
    enc = ConformerEncoder(cfg, input_dim=10)
    params = enc.init_params(np.random.default_rng(12))
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(size=(5, 10)))
    names = ["input.w", "layer0.conv_dw", "layer0.conv_in.w", "layer1.ffn1.w1.w", "layer1.attn.v.w"]

    def f(inp, *leaves):
        trial = dict(params)
        trial.update(dict(zip(names, leaves)))
        return T.tsum(T.tanh(enc.forward(inp, trial)))

    err = grad_check(f, [x] + [params[n] for n in names], max_entries=10, seed=1)
    assert err < 1e-4


def test_encoder_config_validation():
    with pytest.raises(ValueError, match="kind"):
        EncoderConfig(kind="rnn")
    with pytest.raises(ValueError, match="divisible"):
        EncoderConfig(model_dim=30, heads=4)
