"""Tensor container, TCTN serialization layout, seeded init helpers."""

import io
import struct

import numpy as np
import pytest

from incepformer import IntegrityError, Tensor, make_rng, set_strict_finite, trunc_normal
from incepformer import ops
from incepformer.autodiff import Variable
from incepformer.tensor import TENSOR_MAGIC, check_finite


def test_tctn_round_trip_shapes():
    rng = make_rng(0)
    for shape in [(), (3,), (2, 3), (2, 3, 4, 5)]:
        arr = rng.normal(size=shape).astype(np.float32)
        back = Tensor.frombytes(Tensor(arr).tobytes())
        assert back.shape == arr.shape
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back.array, arr)


def test_tctn_layout_hand_packed():
    # independent byte-level oracle: magic, u32 rank, u64 extents, f32 LE payload
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    blob = (TENSOR_MAGIC + struct.pack("<I", 2) + struct.pack("<2Q", 2, 3)
            + arr.astype("<f4").tobytes())
    assert Tensor(arr).tobytes() == blob
    np.testing.assert_array_equal(Tensor.frombytes(blob).array, arr)


def test_tctn_scalar_layout():
    blob = TENSOR_MAGIC + struct.pack("<I", 0) + struct.pack("<f", 2.5)
    assert Tensor(np.float32(2.5)).tobytes() == blob
    assert float(Tensor.frombytes(blob).array) == 2.5


def test_tctn_bad_magic():
    with pytest.raises(IntegrityError, match="magic"):
        Tensor.frombytes(b"XXXX" + struct.pack("<I", 0) + struct.pack("<f", 1.0))


def test_tctn_truncations():
    good = Tensor(np.ones((4, 4), dtype=np.float32)).tobytes()
    for cut in (2, 6, 14, len(good) - 3):  # magic / rank / extents / payload
        with pytest.raises(IntegrityError, match="truncated|magic"):
            Tensor.frombytes(good[:cut])


def test_tctn_payload_is_f32_even_from_f64():
    arr = np.array([1.0 + 1e-12, 2.0], dtype=np.float64)
    back = Tensor.frombytes(Tensor(arr).tobytes(), dtype=np.float64)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back.array, arr.astype(np.float32).astype(np.float64))


def test_read_back_array_is_writable():
    back = Tensor.frombytes(Tensor(np.ones(3, dtype=np.float32)).tobytes())
    back.array[0] = 7.0  # must not raise: checkpoints feed mutable parameters
    assert back.array[0] == 7.0


def test_file_round_trip(tmp_path):
    arr = make_rng(1).normal(size=(3, 5)).astype(np.float32)
    path = tmp_path / "t.tctn"
    Tensor(arr).save(path)
    np.testing.assert_array_equal(Tensor.load(path).array, arr)


def test_strict_finite_toggle():
    prev = set_strict_finite(True)
    try:
        with pytest.raises(FloatingPointError, match="non-finite"):
            check_finite(np.array([np.nan]), "unit")
        with pytest.raises(FloatingPointError, match="add"):
            ops.add(Variable(np.array([np.inf])), Variable(np.array([1.0])))
        set_strict_finite(False)
        check_finite(np.array([np.nan]), "unit")  # disabled: no raise
    finally:
        set_strict_finite(prev)


def test_make_rng_validates_seed():
    for bad in (-1, 2 ** 64):
        with pytest.raises(ValueError, match="seed"):
            make_rng(bad)
    a = make_rng(5).normal(size=8)
    b = make_rng(5).normal(size=8)
    np.testing.assert_array_equal(a, b)


def test_trunc_normal_bounds_and_determinism():
    draws = trunc_normal(make_rng(3), (5000,), std=0.02)
    assert np.abs(draws).max() <= 0.04 + 1e-12
    assert abs(draws.mean()) < 0.002
    again = trunc_normal(make_rng(3), (5000,), std=0.02)
    np.testing.assert_array_equal(draws, again)
    assert trunc_normal(make_rng(0), (4,), dtype=np.float32).dtype == np.float32
