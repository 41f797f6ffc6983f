"""Dense tensor value type, seeded rng, and binary tensor serialization.

Tensors are row-major contiguous numpy arrays of float32 (training default)
or float64 (verification). Non-finite values are treated as an error state;
see `set_strict_finite`.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"TCTN"

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class DimensionError(ValueError):
    """Shape, extent, or axis violation in a tensor operation."""


class IntegrityError(ValueError):
    """Malformed or truncated binary artifact."""


_strict_finite = True


def set_strict_finite(flag: bool) -> bool:
    """Toggle the non-finite error checks on primitive outputs.

    Returns the previous setting so callers can restore it.
    """
    global _strict_finite
    previous = _strict_finite
    _strict_finite = bool(flag)
    return previous


def strict_finite_enabled() -> bool:
    return _strict_finite


def check_finite(array: np.ndarray, where: str) -> None:
    """Raise if `array` contains NaN or Inf and strict mode is on."""
    if _strict_finite and not np.isfinite(array).all():
        raise FloatingPointError(f"non-finite values produced by {where}")


class Tensor:
    """Immutable-ish dense value: shape + row-major float payload.

    `data` exposes the flat element view; `array` is the underlying
    numpy array. Serialization uses the TCTN layout: 4-byte magic,
    u32 rank, u64 extents, f32 payload, all little-endian.
    """

    __slots__ = ("array",)

    def __init__(self, array, dtype=None):
        arr = np.asarray(array)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray promotes rank 0 to rank 1; keep scalars rank 0
        self.array = np.ascontiguousarray(arr) if arr.ndim else arr

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def size(self) -> int:
        return self.array.size

    @property
    def dtype(self):
        return self.array.dtype

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the payload."""
        return self.array.reshape(-1)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.array
        return self.array.astype(dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    # -- TCTN serialization ------------------------------------------------

    def write_to(self, f: BinaryIO) -> None:
        arr = self.array
        f.write(TENSOR_MAGIC)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.astype("<f4", copy=False).tobytes())

    def tobytes(self) -> bytes:
        import io

        buf = io.BytesIO()
        self.write_to(buf)
        return buf.getvalue()

    @classmethod
    def read_from(cls, f: BinaryIO, dtype=np.float32) -> "Tensor":
        magic = f.read(4)
        if magic != TENSOR_MAGIC:
            raise IntegrityError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
        head = f.read(4)
        if len(head) != 4:
            raise IntegrityError("truncated tensor header")
        (rank,) = struct.unpack("<I", head)
        raw = f.read(8 * rank)
        if len(raw) != 8 * rank:
            raise IntegrityError("truncated tensor extents")
        shape = struct.unpack(f"<{rank}Q", raw) if rank else ()
        count = 1
        for extent in shape:
            count *= extent
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise IntegrityError("truncated tensor payload")
        # copy: frombuffer views are read-only, downstream kernels need writable
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        return cls(arr, dtype=dtype)

    @classmethod
    def frombytes(cls, blob: bytes, dtype=np.float32) -> "Tensor":
        import io

        return cls.read_from(io.BytesIO(blob), dtype=dtype)

    def save(self, path) -> None:
        with open(path, "wb") as f:
            self.write_to(f)

    @classmethod
    def load(cls, path, dtype=np.float32) -> "Tensor":
        with open(path, "rb") as f:
            return cls.read_from(f, dtype=dtype)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64): identical draw sequences for identical seeds."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must be a u64, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def trunc_normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float64) -> np.ndarray:
    """Normal(0, std) resampled until all draws fall inside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype, copy=False)
