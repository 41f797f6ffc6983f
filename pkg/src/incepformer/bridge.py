"""Dual transformer bridge over the concatenated multi-stage token sequence.

Every stage map [B, c_i, h_i, w_i] is flattened row-major to [B, N_i, C]
with N_i = c_i*h_i*w_i / C, the segments are concatenated to one sequence,
and four attention layers mix it. Layer kinds: "t" token-reduced attention,
"c" channel-mixing attention; the "para" arrangement runs one of each in
parallel on the input, concatenates on depth, projects back, then applies
two serial "t" layers.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .attention import ChannelAwareAttention, TokenAwareAttention, map_to_tokens, tokens_to_map
from .nn import FeedForward, LayerNorm, Linear, Module, ModuleList
from .tensor import DimensionError

BRIDGE_DEPTH = 4


@dataclass
class BridgeSequence:
    """Recorded segment lengths/extents for the flatten -> restore round trip."""

    dim: int
    lengths: list[int]
    shapes: list[tuple[int, int, int]]  # (c_i, h_i, w_i)


def flatten_concat(maps, dim: int):
    """Stage maps -> ([B, sum N_i, C], BridgeSequence)."""
    parts, lengths, shapes = [], [], []
    for m in maps:
        b, c, h, w = m.shape
        if (c * h * w) % dim:
            raise DimensionError(f"stage volume {c}x{h}x{w} not divisible by bridge dim {dim}")
        n = c * h * w // dim
        parts.append(ops.reshape(m, (b, n, dim)))
        lengths.append(n)
        shapes.append((c, h, w))
    return ops.concat(parts, axis=1), BridgeSequence(dim, lengths, shapes)


def restore(y, seq: BridgeSequence):
    """Inverse of flatten_concat: sequence -> per-stage maps."""
    b = y.shape[0]
    parts = ops.split(y, seq.lengths, axis=1)
    return [ops.reshape(p, (b, c, h, w)) for p, (c, h, w) in zip(parts, seq.shapes)]


def validate_arrangement(arrangement: str) -> str:
    if arrangement == "para":
        return arrangement
    if len(arrangement) != BRIDGE_DEPTH or any(ch not in "ct" for ch in arrangement):
        raise ValueError(
            f"malformed bridge arrangement {arrangement!r}: expected 'para' or "
            f"{BRIDGE_DEPTH} chars drawn from 'c'/'t'")
    return arrangement


class StageFFN(Module):
    """Position-wise FFN over the spatial tokens of one restored stage map."""

    def __init__(self, channels: int, rng):
        self.norm = LayerNorm(channels)
        self.ffn = FeedForward(channels, rng)

    def delta(self, m):
        """FFN term for map [B, c, h, w], returned in map layout (no residual)."""
        hw = (m.shape[2], m.shape[3])
        return tokens_to_map(self.ffn(self.norm(map_to_tokens(m))), hw)


class BridgeLayer(Module):
    """Prenorm attention over the full sequence, residual, then per-stage
    FFN terms on the restored maps, re-flattened and added residually."""

    def __init__(self, dim: int, kind: str, rng, stage_channels, reduction: int = 1):
        self.kind = kind
        self.norm = LayerNorm(dim)
        if kind == "t":
            self.attn = TokenAwareAttention(dim, rng, heads=1, r=reduction)
        elif kind == "c":
            self.attn = ChannelAwareAttention(dim, rng)
        else:
            raise ValueError(f"unknown bridge layer kind {kind!r}")
        self.stage_ffns = ModuleList([StageFFN(c, rng) for c in stage_channels])

    def __call__(self, y, seq: BridgeSequence):
        res = ops.add(y, self.attn(self.norm(y)))
        b = res.shape[0]
        parts = ops.split(res, seq.lengths, axis=1)
        deltas = []
        for part, (c, h, w), ffn in zip(parts, seq.shapes, self.stage_ffns):
            m = ops.reshape(part, (b, c, h, w))
            deltas.append(ops.reshape(ffn.delta(m), (b, c * h * w // seq.dim, seq.dim)))
        return ops.add(ops.concat(deltas, axis=1), res)


class Bridge(Module):
    """Four bridge layers over the flattened stages, then an optional
    distinct per-stage FFN (residual) on the restored maps."""

    def __init__(self, dim: int, rng, *, arrangement: str = "cttt",
                 stage_channels=(8, 16, 40, 64), reduction: int = 1,
                 final_stage_ffn: bool = True):
        self.dim = dim
        self.arrangement = validate_arrangement(arrangement)
        kinds = "cttt" if self.arrangement == "para" else self.arrangement
        self.layers = ModuleList([
            BridgeLayer(dim, kind, rng, stage_channels, reduction=reduction)
            for kind in kinds
        ])
        self.para_proj = Linear(2 * dim, dim, rng) if self.arrangement == "para" else None
        self.final_ffns = (ModuleList([StageFFN(c, rng) for c in stage_channels])
                           if final_stage_ffn else None)

    def __call__(self, maps):
        y, seq = flatten_concat(maps, self.dim)
        if self.arrangement == "para":
            y_c = self.layers[0](y, seq)
            y_t = self.layers[1](y, seq)
            y = self.para_proj(ops.concat([y_c, y_t], axis=2))
            y = self.layers[2](y, seq)
            y = self.layers[3](y, seq)
        else:
            for layer in self.layers:
                y = layer(y, seq)
        outs = restore(y, seq)
        if self.final_ffns is not None:
            outs = [ops.add(m, ffn.delta(m)) for m, ffn in zip(outs, self.final_ffns)]
        return outs
