"""Decoder: sub-pixel patch expanding, skip fusion, and the 4x segmentation
head. Three stages climb from [8C, H/32] back to [C, H/4]; each halves the
channel depth while doubling both spatial extents, concatenates the matching
encoder/bridge skip, and projects back to that resolution's stage depth.
"""

from __future__ import annotations

from . import ops
from .attention import EfficientTransformerBlock, map_to_tokens, tokens_to_map
from .nn import Conv2d, LayerNorm, Linear, Module, ModuleList
from .tensor import DimensionError


class PatchExpanding(Module):
    """Affine C -> 2C on tokens, sub-pixel rearrange [B,2C,h,w] ->
    [B, C/2, 2h, 2w], then layer norm. C must be even."""

    def __init__(self, c_in: int, rng):
        if c_in % 2:
            raise DimensionError(f"patch expanding needs even channel depth, got {c_in}")
        self.expand = Linear(c_in, 2 * c_in, rng)
        self.norm = LayerNorm(c_in // 2)

    def __call__(self, x):
        b, c, h, w = x.shape
        t = self.expand(map_to_tokens(x))
        up = ops.upsample2x_rearrange(tokens_to_map(t, (h, w)))
        return tokens_to_map(self.norm(map_to_tokens(up)), (2 * h, 2 * w))


class DecoderStage(Module):
    """expand -> concat skip -> affine fusion to the stage depth -> blocks."""

    def __init__(self, c_prev: int, c_skip: int, c_out: int, heads: int, rng,
                 depth: int = 2, use_crpe: bool = True):
        self.expand = PatchExpanding(c_prev, rng)
        self.fuse = Linear(c_prev // 2 + c_skip, c_out, rng)
        self.blocks = ModuleList([
            EfficientTransformerBlock(c_out, heads, rng, use_crpe=use_crpe)
            for _ in range(depth)
        ])

    def __call__(self, x, skip):
        e = self.expand(x)
        if e.shape[2:] != skip.shape[2:]:
            raise DimensionError(
                f"skip extents {tuple(skip.shape[2:])} != expanded {tuple(e.shape[2:])}")
        hw = (e.shape[2], e.shape[3])
        t = self.fuse(map_to_tokens(ops.concat([e, skip], axis=1)))
        for block in self.blocks:
            t = block(t, hw)
        return tokens_to_map(t, hw)


class SegmentationHead(Module):
    """4x sub-pixel expansion back to input resolution, then 1x1 conv to
    class logits."""

    def __init__(self, c_in: int, num_classes: int, rng):
        self.expand = Linear(c_in, 16 * c_in, rng)
        self.classify = Conv2d(c_in, num_classes, 1, rng)

    def __call__(self, x):
        b, c, h, w = x.shape
        t = self.expand(map_to_tokens(x))
        up = ops.upsample2x_rearrange(tokens_to_map(t, (h, w)))
        up = ops.upsample2x_rearrange(up)
        return self.classify(up)
