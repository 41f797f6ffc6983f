"""Attention complexity benchmark.

Counts forward flops at several token counts N and fits a log-log slope.
Channel-aware and factorized attention are linear in N (slope ~ 1); dense
token-aware attention is quadratic (slope ~ 2). Flops come from the
instrumented op layer, not wall-clock, so the fit is noise-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import ChannelAwareAttention, FactorizedAttention, TokenAwareAttention
from .autodiff import Variable, no_grad
from .ops import count_flops
from .tensor import make_rng

DEFAULT_SIZES = (64, 256, 1024, 4096)
SLOPE_BANDS = {"factorized": (0.8, 1.3), "channel": (0.8, 1.3), "token": (1.6, 2.3)}
ATTENTION_KINDS = tuple(SLOPE_BANDS)


def _square(n: int) -> tuple[int, int]:
    side = int(round(n ** 0.5))
    if side * side != n:
        raise ValueError(f"token count {n} is not a perfect square")
    return side, side


def attention_flops(kind: str, n: int, dim: int = 32, r: int = 1,
                    heads: int = 1, seed: int = 0) -> int:
    """Forward flops of one attention module on a [1, n, dim] sequence."""
    rng = make_rng(seed)
    if kind == "factorized":
        module = FactorizedAttention(dim, heads, rng, use_crpe=True)
    elif kind == "token":
        module = TokenAwareAttention(dim, rng, heads=heads, r=r)
    elif kind == "channel":
        module = ChannelAwareAttention(dim, rng)
    else:
        raise ValueError(f"unknown attention kind '{kind}', expected {ATTENTION_KINDS}")
    x = Variable(make_rng(seed + 1).normal(0.0, 1.0, size=(1, n, dim)),
                 requires_grad=False)
    with no_grad(), count_flops() as counter:
        if kind == "factorized":
            module(x, _square(n))
        else:
            module(x)
    return counter.total


@dataclass
class BenchResult:
    kind: str
    sizes: tuple[int, ...]
    flops: tuple[int, ...]
    slope: float

    @property
    def band(self) -> tuple[float, float]:
        return SLOPE_BANDS[self.kind]

    @property
    def ok(self) -> bool:
        lo, hi = self.band
        return lo <= self.slope <= hi


def fit_slope(sizes, flops) -> float:
    """Least-squares slope of log2(flops) against log2(N)."""
    xs = np.log2(np.asarray(sizes, dtype=np.float64))
    ys = np.log2(np.asarray(flops, dtype=np.float64))
    return float(np.polyfit(xs, ys, 1)[0])


def run_bench(kinds=ATTENTION_KINDS, sizes=DEFAULT_SIZES, dim: int = 32,
              r: int = 1, seed: int = 0) -> list[BenchResult]:
    results = []
    for kind in kinds:
        flops = tuple(attention_flops(kind, n, dim=dim, r=r, seed=seed) for n in sizes)
        results.append(BenchResult(kind, tuple(sizes), flops, fit_slope(sizes, flops)))
    return results


def token_reduction_ratio(n: int, dim: int = 32, seed: int = 0) -> float:
    """flops(r=2) / flops(r=1) for token-aware attention at fixed N."""
    half = attention_flops("token", n, dim=dim, r=2, seed=seed)
    full = attention_flops("token", n, dim=dim, r=1, seed=seed)
    return half / full


def format_report(results: list[BenchResult], ratio: float | None = None) -> str:
    lines = ["== attention flop scaling =="]
    for res in results:
        lo, hi = res.band
        status = "pass" if res.ok else "FAIL"
        points = "  ".join(f"N={n}:{f:,}" for n, f in zip(res.sizes, res.flops))
        lines.append(f"{res.kind:<11} slope {res.slope:5.3f}  band [{lo},{hi}]  {status}")
        lines.append(f"  {points}")
    if ratio is not None:
        status = "pass" if 0.45 <= ratio <= 0.55 else "FAIL"
        lines.append(f"token r=2 / r=1 flop ratio: {ratio:.3f}  band [0.45,0.55]  {status}")
    return "\n".join(lines)
