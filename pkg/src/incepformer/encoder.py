"""Four-stage encoder.

Stage 1: overlapped patch embedding (7x7 stride 4) + 2 transformer blocks.
Stages 2-4: multi-scale patch merging (serial-inception branches), a
transformer per branch plus a conv sub-branch, and gated dual-axis fusion
back to the stage depth. Stage depths follow [C, 2C, 5C, 8C].
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import ops
from .attention import EfficientTransformerBlock, map_to_tokens, tokens_to_map
from .nn import BatchNorm, Conv2d, ConvBnAct, LayerNorm, Module, ModuleList
from .tensor import DimensionError

STAGE_MULTIPLIERS = (1, 2, 5, 8)


def stage_dims(base_dim: int) -> tuple[int, int, int, int]:
    return tuple(m * base_dim for m in STAGE_MULTIPLIERS)


def serial_kernel_area(depth: int = 3, k: int = 3) -> int:
    """Per-channel-pair weight count of a serial stack of `depth` kxk convs."""
    return depth * k * k


def parallel_kernel_area(kernel_sizes=(3, 5, 7)) -> int:
    """Per-channel-pair weight count of parallel convs at the given sizes."""
    return sum(k * k for k in kernel_sizes)


class ParallelInception(Module):
    """Test oracle only: parallel 3/5/7 stride-2 branches with identical
    channel depths, for parameter-count comparison against the serial form."""

    def __init__(self, c_in: int, c_out: int, rng, kernel_sizes=(3, 5, 7)):
        self.branches = ModuleList([
            ConvBnAct(c_in, c_out, k, rng, stride=2, pad=k // 2) for k in kernel_sizes
        ])

    def __call__(self, x):
        return [branch(x) for branch in self.branches]


class RIPM(Module):
    """Serial-inception patch merging: branch b stacks b 3x3 convs (first
    stride 2), reaching receptive fields 3/5/7 with far fewer weights than
    parallel 3/5/7 kernels. Intermediate convs stay at the input depth; the
    last conv of each branch projects to the stage depth.
    """

    def __init__(self, c_in: int, c_out: int, rng, branches: int = 3):
        if branches < 1:
            raise DimensionError(f"need at least one branch, got {branches}")
        chains = []
        for b in range(1, branches + 1):
            chain = []
            for j in range(b):
                last = j == b - 1
                chain.append(ConvBnAct(
                    c_in, c_out if last else c_in, 3, rng,
                    stride=2 if j == 0 else 1, pad=1))
            chains.append(ModuleList(chain))
        self.branches = ModuleList(chains)

    def __call__(self, x):
        _, _, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"merging needs even spatial extents, got {h}x{w}")
        outs = []
        for chain in self.branches:
            y = x
            for conv in chain:
                y = conv(y)
            outs.append(y)
        return outs


class MBTransformer(Module):
    """One transformer stack per merged branch plus a 3x3 conv sub-branch on
    the kernel-3 branch output; emits k+1 same-shape maps."""

    def __init__(self, dim: int, heads: int, depth: int, branches: int, rng,
                 use_crpe: bool = True):
        self.paths = ModuleList([
            ModuleList([EfficientTransformerBlock(dim, heads, rng, use_crpe=use_crpe)
                        for _ in range(depth)])
            for _ in range(branches)
        ])
        self.conv_branch = ConvBnAct(dim, dim, 3, rng, stride=1, pad=1)

    def __call__(self, maps):
        outs = []
        for blocks, m in zip(self.paths, maps):
            hw = (m.shape[2], m.shape[3])
            t = map_to_tokens(m)
            for block in blocks:
                t = block(t, hw)
            outs.append(tokens_to_map(t, hw))
        outs.append(self.conv_branch(maps[0]))
        return outs


class IFF(Module):
    """Inception feature fusion: concat the n inputs to depth nC, pool along
    each spatial axis, squeeze through a shared 1x1 conv (+BN+SiLU), expand
    to per-direction sigmoid gates, gate the concat, and project to c_out.

    mode="naive_1x1" replaces all of that with concat + 1x1 projection.
    """

    def __init__(self, n_inputs: int, c_each: int, c_out: int, rng,
                 reduction: int = 4, mode: str = "iff"):
        if mode not in ("iff", "naive_1x1"):
            raise ValueError(f"unknown fusion mode {mode!r}")
        nc = n_inputs * c_each
        self.mode = mode
        self.n_inputs = n_inputs
        self.proj = Conv2d(nc, c_out, 1, rng)
        if mode == "iff":
            if nc % reduction:
                raise DimensionError(f"reduction {reduction} must divide concat depth {nc}")
            mid = nc // reduction
            self.squeeze = Conv2d(nc, mid, 1, rng, bias=False)
            self.bn = BatchNorm(mid)
            self.gate_h = Conv2d(mid, nc, 1, rng)
            self.gate_w = Conv2d(mid, nc, 1, rng)

    def __call__(self, maps):
        if len(maps) != self.n_inputs:
            raise DimensionError(f"expected {self.n_inputs} maps, got {len(maps)}")
        x = ops.concat(maps, axis=1)
        if self.mode == "naive_1x1":
            return self.proj(x)
        b, nc, h, w = x.shape
        z_h = ops.mean_reduce(x, 3)                      # [B, nC, H]
        z_w = ops.mean_reduce(x, 2)                      # [B, nC, W]
        z = ops.reshape(ops.concat([z_h, z_w], axis=2), (b, nc, h + w, 1))
        f = ops.silu(self.bn(self.squeeze(z)))
        f_h, f_w = ops.split(f, [h, w], axis=2)
        g_h = ops.sigmoid(self.gate_h(f_h))              # [B, nC, H, 1]
        g_w = ops.permute(ops.sigmoid(self.gate_w(f_w)), (0, 1, 3, 2))  # [B, nC, 1, W]
        return self.proj(ops.mul(ops.mul(x, g_h), g_w))


class PatchMerge(Module):
    """Single-path 3x3 stride-2 merge (baseline variant): conv + layer norm."""

    def __init__(self, c_in: int, c_out: int, rng):
        self.conv = Conv2d(c_in, c_out, 3, rng, stride=2, pad=1)
        self.norm = LayerNorm(c_out)

    def __call__(self, x):
        _, _, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"merging needs even spatial extents, got {h}x{w}")
        y = self.conv(x)
        hw = (y.shape[2], y.shape[3])
        return tokens_to_map(self.norm(map_to_tokens(y)), hw)


class Stage1(Module):
    """Overlapped patch embedding (7x7, stride 4, pad 3) + fixed 2 blocks."""

    def __init__(self, c_in: int, c_out: int, heads: int, rng, use_crpe: bool = True):
        self.embed = Conv2d(c_in, c_out, 7, rng, stride=4, pad=3)
        self.norm = LayerNorm(c_out)
        self.blocks = ModuleList([
            EfficientTransformerBlock(c_out, heads, rng, use_crpe=use_crpe)
            for _ in range(2)
        ])

    def __call__(self, x):
        y = self.embed(x)
        hw = (y.shape[2], y.shape[3])
        t = self.norm(map_to_tokens(y))
        for block in self.blocks:
            t = block(t, hw)
        return tokens_to_map(t, hw)


class MergeStage(Module):
    """Stages 2-4: merge -> transformer(s) -> fusion, per variant wiring.

    merge: "ripm" (multi-scale) or "pm" (single path).
    multi_branch: transformer per branch + conv sub-branch, else one path.
    fusion: "iff" | "naive_1x1" (multi-branch), or pre-transformer naive
    concat projection when a multi-map merge feeds a single path.
    """

    def __init__(self, c_in: int, c_out: int, heads: int, depth: int, rng, *,
                 merge: str = "ripm", branches: int = 3, multi_branch: bool = True,
                 fusion: str = "iff", iff_reduction: int = 4, use_crpe: bool = True):
        self.multi_branch = multi_branch
        if merge == "ripm":
            self.merge = RIPM(c_in, c_out, rng, branches=branches)
            n_maps = branches
        elif merge == "pm":
            self.merge = PatchMerge(c_in, c_out, rng)
            n_maps = 1
        else:
            raise ValueError(f"unknown merge kind {merge!r}")
        if multi_branch:
            self.transformer = MBTransformer(c_out, heads, depth, n_maps, rng,
                                             use_crpe=use_crpe)
            self.fusion = IFF(n_maps + 1, c_out, c_out, rng,
                              reduction=iff_reduction, mode=fusion)
        else:
            self.pre_fuse = (Conv2d(n_maps * c_out, c_out, 1, rng)
                             if n_maps > 1 else None)
            self.blocks = ModuleList([
                EfficientTransformerBlock(c_out, heads, rng, use_crpe=use_crpe)
                for _ in range(depth)
            ])

    def __call__(self, x):
        maps = self.merge(x)
        if not isinstance(maps, list):
            maps = [maps]
        if self.multi_branch:
            return self.fusion(self.transformer(maps))
        if self.pre_fuse is not None:
            y = self.pre_fuse(ops.concat(maps, axis=1))
        else:
            y = maps[0]
        hw = (y.shape[2], y.shape[3])
        t = map_to_tokens(y)
        for block in self.blocks:
            t = block(t, hw)
        return tokens_to_map(t, hw)


@dataclass
class StageFeatures:
    """Per-stage maps [B, c_i, H/2^{i+1}, W/2^{i+1}] plus their extents."""

    maps: list = field(default_factory=list)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(m.shape) for m in self.maps]


class Encoder(Module):
    def __init__(self, rng, *, in_channels: int = 3, base_dim: int = 8,
                 heads=(1, 2, 5, 8), layer_list=(3, 8, 3), branch_list=(3, 3, 3),
                 merge: str = "ripm", multi_branch: bool = True, fusion: str = "iff",
                 iff_reduction: int = 4, use_crpe: bool = True):
        dims = stage_dims(base_dim)
        self.stage1 = Stage1(in_channels, dims[0], heads[0], rng, use_crpe=use_crpe)
        self.stages = ModuleList([
            MergeStage(dims[i], dims[i + 1], heads[i + 1], layer_list[i], rng,
                       merge=merge, branches=branch_list[i], multi_branch=multi_branch,
                       fusion=fusion, iff_reduction=iff_reduction, use_crpe=use_crpe)
            for i in range(3)
        ])

    def __call__(self, x) -> StageFeatures:
        _, _, h, w = x.shape
        if h % 32 or w % 32:
            raise DimensionError(f"input extents must be divisible by 32, got {h}x{w}")
        feats = StageFeatures()
        y = self.stage1(x)
        feats.maps.append(y)
        for stage in self.stages:
            y = stage(y)
            feats.maps.append(y)
        return feats
