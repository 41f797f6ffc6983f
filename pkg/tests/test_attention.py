"""Attention variants against dense/closed-form oracles and structural invariants."""

import numpy as np
import pytest

from incepformer import ops
from incepformer.attention import (ChannelAwareAttention, ConvPositionEncoding,
                                   EfficientTransformerBlock, FactorizedAttention,
                                   TokenAwareAttention, map_to_tokens, tokens_to_map)
from incepformer.autodiff import Variable, no_grad
from incepformer.tensor import DimensionError, make_rng


def _lin(layer, x):
    return x @ layer.w.data + layer.b.data


def dense_attention_oracle(mod, x):
    """Plain softmax(QK^T/sqrt(d))V with the module's own projections."""
    q = _lin(mod.q, x)
    k = _lin(mod.k_red, _lin(mod.k, x))
    v = _lin(mod.v_red, _lin(mod.v, x))
    d = x.shape[-1]
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    attn = e / e.sum(axis=-1, keepdims=True)
    return _lin(mod.out, attn @ v)


def test_token_aware_r1_equals_dense_attention():
    rng = make_rng(0)
    for n in (16, 64, 256):
        mod = TokenAwareAttention(32, make_rng(n), heads=1, r=1)
        x = rng.normal(size=(2, n, 32))
        with no_grad():
            out = mod(Variable(x)).data
        diff = np.abs(out - dense_attention_oracle(mod, x)).max()
        assert diff < 1e-10, (n, diff)


def test_token_aware_rows_stochastic_and_reduction_shape():
    rng = make_rng(1)
    for r in (1, 2, 4):
        mod = TokenAwareAttention(16, make_rng(r), heads=2, r=r)
        x = Variable(rng.normal(size=(3, 64, 16)))
        with no_grad():
            out, attn = mod(x, return_attn=True)
        assert out.shape == (3, 64, 16)
        assert attn.shape == (3, 2, 64, 64 // r)
        np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_token_aware_rejects_bad_dims():
    with pytest.raises(DimensionError, match="heads"):
        TokenAwareAttention(10, make_rng(0), heads=4)
    with pytest.raises(DimensionError, match="r"):
        TokenAwareAttention(8, make_rng(0), r=0)
    mod = TokenAwareAttention(8, make_rng(0), r=4)
    with pytest.raises(DimensionError, match="divisible"):
        with no_grad():
            mod(Variable(np.zeros((1, 6, 8))))


def test_channel_aware_two_order_associativity():
    # (Q_sm (K_sm^T V)) vs ((Q_sm K_sm^T) V): linear attention is associative
    rng = make_rng(2)
    mod = ChannelAwareAttention(32, make_rng(7))
    x = Variable(rng.normal(size=(2, 100, 32)))
    with no_grad():
        _, (q_sm, k_sm, v, _) = mod(x, return_parts=True)
    q, k, v = q_sm.data, k_sm.data, v.data
    context_first = q @ (k.transpose(0, 2, 1) @ v)
    scores_first = (q @ k.transpose(0, 2, 1)) @ v
    assert np.abs(context_first - scores_first).max() < 1e-10


def test_channel_aware_softmax_axes():
    rng = make_rng(3)
    mod = ChannelAwareAttention(16, make_rng(8))
    with no_grad():
        _, (q_sm, k_sm, _, _) = mod(Variable(rng.normal(size=(2, 40, 16))), return_parts=True)
    np.testing.assert_allclose(q_sm.data.sum(axis=2), 1.0, rtol=0, atol=1e-12)  # channels
    np.testing.assert_allclose(k_sm.data.sum(axis=1), 1.0, rtol=0, atol=1e-12)  # tokens
    assert mod.d_k == 8 and mod.d_v == 16
    with pytest.raises(DimensionError, match="even"):
        ChannelAwareAttention(15, make_rng(0))


def test_factorized_single_token_closed_form():
    # N=1: softmax(K) is all ones, so out = (sum_d q_d) * v through the out proj
    rng = make_rng(4)
    mod = FactorizedAttention(8, 1, make_rng(9), use_crpe=False)
    x = rng.normal(size=(3, 1, 8))
    with no_grad():
        out = mod(x := Variable(x)).data
    q = _lin(mod.q, x.data)
    v = _lin(mod.v, x.data)
    expect = _lin(mod.out, q.sum(axis=-1, keepdims=True) * v)
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_factorized_needs_spatial_extents_for_crpe():
    mod = FactorizedAttention(8, 2, make_rng(0), use_crpe=True)
    with pytest.raises(DimensionError, match="H\\*W"):
        with no_grad():
            mod(Variable(np.zeros((1, 16, 8))), hw=(3, 3))


def test_batch_permutation_equivariance():
    rng = make_rng(5)
    x = rng.normal(size=(4, 16, 8))
    perm = np.array([2, 0, 3, 1])
    mods = [
        (TokenAwareAttention(8, make_rng(1), heads=2, r=2), {}),
        (ChannelAwareAttention(8, make_rng(2)), {}),
        (FactorizedAttention(8, 2, make_rng(3)), dict(hw=(4, 4))),
        (EfficientTransformerBlock(8, 2, make_rng(4)), dict(hw=(4, 4))),
    ]
    for mod, kw in mods:
        with no_grad():
            full = mod(Variable(x), **kw).data
            shuffled = mod(Variable(x[perm]), **kw).data
        np.testing.assert_allclose(shuffled, full[perm], rtol=0, atol=1e-12)


def test_zero_weight_transformer_block_is_identity():
    blk = EfficientTransformerBlock(8, 2, make_rng(6))
    for _, p in blk.named_parameters():
        p.data[...] = 0.0
    x = make_rng(7).normal(size=(2, 16, 8))
    with no_grad():
        out = blk(Variable(x), hw=(4, 4)).data
    np.testing.assert_array_equal(out, x)  # residual-only path, exact


def test_conv_position_encoding_hand_expansion():
    rng = make_rng(8)
    cpe = ConvPositionEncoding(4, make_rng(11))
    x = rng.normal(size=(2, 9, 4))
    with no_grad():
        out = cpe(Variable(x), (3, 3)).data
        fmap = tokens_to_map(Variable(x), (3, 3))
        conv = ops.conv2d(fmap, cpe.proj.w, cpe.proj.b, stride=1, pad=1, groups=4)
        expect = x + map_to_tokens(conv).data
    np.testing.assert_allclose(out, expect, rtol=0, atol=1e-12)


def test_token_map_round_trip():
    x = make_rng(9).normal(size=(2, 5, 4, 6))
    with no_grad():
        t = map_to_tokens(Variable(x))
        assert t.shape == (2, 24, 5)
        back = tokens_to_map(t, (4, 6)).data
    np.testing.assert_array_equal(back, x)
