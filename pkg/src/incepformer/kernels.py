"""Conv kernel backend selection.

The compiled extension is preferred when importable; the numpy kernels are
the fallback. `INCEPFORMER_KERNELS` forces a choice: "compiled", "numpy",
or "auto" (default).
"""

from __future__ import annotations

import os

from . import kernels_numpy

_requested = os.environ.get("INCEPFORMER_KERNELS", "auto").lower()
if _requested not in ("auto", "compiled", "numpy"):
    raise ValueError(f"INCEPFORMER_KERNELS must be auto|compiled|numpy, got {_requested!r}")

_impl = None
if _requested in ("auto", "compiled"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "INCEPFORMER_KERNELS=compiled but the extension is not built; "
                "run `pip install -e . --no-build-isolation` or `python setup.py build_ext --inplace`"
            )
if _impl is None:
    _impl = kernels_numpy

BACKEND_NAME: str = _impl.BACKEND_NAME
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward


def available_backends() -> dict[str, object]:
    """Importable kernel modules keyed by backend name (for benchmarks/tests)."""
    found: dict[str, object] = {"numpy": kernels_numpy}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        found["compiled"] = _kernels
    except ImportError:
        pass
    return found
