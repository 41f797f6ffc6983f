"""Multi-stage token bridge: flatten/restore, arrangements, identity limits."""

import numpy as np
import pytest

from incepformer.autodiff import Variable, no_grad
from incepformer.bridge import (Bridge, BridgeLayer, flatten_concat, restore,
                                validate_arrangement)
from incepformer.tensor import DimensionError, make_rng

DESK_SHAPES = [(8, 8, 8), (16, 4, 4), (40, 2, 2), (64, 1, 1)]


def desk_maps(rng, batch=2):
    return [Variable(rng.normal(size=(batch, c, h, w))) for c, h, w in DESK_SHAPES]


def test_flatten_restore_round_trip_exact():
    rng = make_rng(0)
    maps = desk_maps(rng)
    with no_grad():
        y, seq = flatten_concat(maps, 8)
        back = restore(y, seq)
    assert seq.lengths == [64, 32, 20, 8]  # sum = 124 desk tokens
    assert y.shape == (2, 124, 8)
    for m, b in zip(maps, back):
        np.testing.assert_array_equal(b.data, m.data)


def test_flatten_rejects_indivisible_volume():
    with pytest.raises(DimensionError, match="divisible"):
        with no_grad():
            flatten_concat([Variable(np.zeros((1, 3, 5, 5)))], 8)


def test_full_scale_token_budget():
    shapes = [(64, 56, 56), (128, 28, 28), (320, 14, 14), (512, 7, 7)]
    maps = [Variable(np.zeros((1, c, h, w))) for c, h, w in shapes]
    with no_grad():
        y, seq = flatten_concat(maps, 64)
    assert sum(seq.lengths) == 6076
    assert y.shape == (1, 6076, 64)


def test_zero_weight_bridge_is_identity():
    bridge = Bridge(8, make_rng(1), arrangement="cttt",
                    stage_channels=tuple(c for c, _, _ in DESK_SHAPES))
    for _, p in bridge.named_parameters():
        p.data[...] = 0.0
    maps = desk_maps(make_rng(2))
    with no_grad():
        outs = bridge(maps)
    for m, out in zip(maps, outs):
        np.testing.assert_array_equal(out.data, m.data)  # residual-only, exact


def test_bridge_preserves_stage_geometry():
    for arrangement in ("cttt", "tttt", "ctct", "para"):
        bridge = Bridge(8, make_rng(3), arrangement=arrangement,
                        stage_channels=tuple(c for c, _, _ in DESK_SHAPES))
        maps = desk_maps(make_rng(4))
        with no_grad():
            outs = bridge(maps)
        assert [tuple(o.shape) for o in outs] == [tuple(m.shape) for m in maps]


def test_para_arrangement_builds_fuse_projection():
    para = Bridge(8, make_rng(5), arrangement="para",
                  stage_channels=(8, 16, 40, 64))
    serial = Bridge(8, make_rng(5), arrangement="cttt",
                    stage_channels=(8, 16, 40, 64))
    assert para.para_proj is not None and serial.para_proj is None
    assert para.para_proj.w.shape == (16, 8)


def test_arrangement_validation_names_offender():
    assert validate_arrangement("para") == "para"
    assert validate_arrangement("cttt") == "cttt"
    for bad in ("ctt", "cttx", "dense"):
        with pytest.raises(ValueError, match=repr(bad)):
            validate_arrangement(bad)
    with pytest.raises(ValueError, match="kind"):
        BridgeLayer(8, "x", make_rng(0), (8,))


def test_token_layers_honor_reduction():
    bridge = Bridge(8, make_rng(6), arrangement="cttt", reduction=4,
                    stage_channels=(8, 16, 40, 64))
    token_layers = [l for l in bridge.layers if l.kind == "t"]
    assert all(l.attn.r == 4 for l in token_layers)
    maps = desk_maps(make_rng(7))  # 124 tokens % 4 == 0
    with no_grad():
        outs = bridge(maps)
    assert [tuple(o.shape) for o in outs] == [tuple(m.shape) for m in maps]


def test_final_stage_ffn_optional():
    with_ffn = Bridge(8, make_rng(8), stage_channels=(8, 16, 40, 64),
                      final_stage_ffn=True)
    without = Bridge(8, make_rng(8), stage_channels=(8, 16, 40, 64),
                     final_stage_ffn=False)
    n_with = sum(p.data.size for _, p in with_ffn.named_parameters())
    n_without = sum(p.data.size for _, p in without.named_parameters())
    assert with_ffn.final_ffns is not None and without.final_ffns is None
    assert n_with > n_without
