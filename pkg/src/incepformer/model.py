"""Model assembly, variants, and checkpoint io.

Variant tags select the encoder/fusion/bridge wiring:
    effformer  single-path merge + single transformer per stage
    s          multi-scale merge, fused 1x1, single transformer per stage
    rm         multi-scale merge + per-branch transformers + naive 1x1 fusion
    rmi        like rm with gated dual-axis fusion
    full       rmi + the 4-layer bridge (arrangement configurable)
Parameter counts satisfy effformer < rm <= rmi < full.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .bridge import Bridge, flatten_concat
from .decoder import DecoderStage, SegmentationHead
from .encoder import Encoder, stage_dims
from .nn import Module, ModuleList
from .tensor import IntegrityError, Tensor, make_rng

CHECKPOINT_MAGIC = b"TCCK"

VARIANTS = ("effformer", "s", "rm", "rmi", "full")


@dataclass
class ModelConfig:
    variant: str = "full"
    in_channels: int = 3
    base_dim: int = 8
    num_classes: int = 4
    layer_list: tuple[int, ...] = (3, 8, 3)
    branch_list: tuple[int, ...] = (3, 3, 3)
    heads: tuple[int, ...] = (1, 2, 5, 8)
    bridge: str = "cttt"
    bridge_reduction: int = 1
    bridge_final_ffn: bool = True
    use_crpe: bool = True
    iff_reduction: int = 4
    decoder_depth: int = 2
    precision: str = "float32"

    def validate(self) -> "ModelConfig":
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.base_dim < 2 or self.base_dim % 2:
            raise ValueError(f"base_dim must be even and >= 2, got {self.base_dim}")
        if len(self.layer_list) != 3 or len(self.branch_list) != 3:
            raise ValueError("layer_list and branch_list must each have 3 entries")
        if len(self.heads) != 4:
            raise ValueError("heads must have 4 entries")
        for dim, h in zip(stage_dims(self.base_dim), self.heads):
            if dim % h:
                raise ValueError(f"stage dim {dim} not divisible by heads {h}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32|float64, got {self.precision!r}")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


class SegModel(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cfg.validate()
        self.cfg = cfg
        dims = stage_dims(cfg.base_dim)
        variant = cfg.variant
        self.encoder = Encoder(
            rng,
            in_channels=cfg.in_channels,
            base_dim=cfg.base_dim,
            heads=cfg.heads,
            layer_list=cfg.layer_list,
            branch_list=cfg.branch_list,
            merge="pm" if variant == "effformer" else "ripm",
            multi_branch=variant in ("rm", "rmi", "full"),
            fusion="naive_1x1" if variant == "rm" else "iff",
            iff_reduction=cfg.iff_reduction,
            use_crpe=cfg.use_crpe,
        )
        self.bridge = None
        if variant == "full":
            self.bridge = Bridge(
                cfg.base_dim, rng,
                arrangement=cfg.bridge,
                stage_channels=dims,
                reduction=cfg.bridge_reduction,
                final_stage_ffn=cfg.bridge_final_ffn,
            )
        # climb H/32 -> H/4: fuse to the encoder depth at each resolution
        self.decoder = ModuleList([
            DecoderStage(dims[3], dims[2], dims[2], cfg.heads[2], rng,
                         depth=cfg.decoder_depth, use_crpe=cfg.use_crpe),
            DecoderStage(dims[2], dims[1], dims[1], cfg.heads[1], rng,
                         depth=cfg.decoder_depth, use_crpe=cfg.use_crpe),
            DecoderStage(dims[1], dims[0], dims[0], cfg.heads[0], rng,
                         depth=cfg.decoder_depth, use_crpe=cfg.use_crpe),
        ])
        self.head = SegmentationHead(dims[0], cfg.num_classes, rng)
        self.to_dtype(cfg.dtype)

    def __call__(self, x, trace: list | None = None):
        """x: [B, in_channels, H, W] with H, W divisible by 32 -> logits
        [B, num_classes, H, W]."""
        feats = self.encoder(x)
        if trace is not None:
            for i, m in enumerate(feats.maps):
                trace.append((f"encoder.stage{i + 1}", tuple(m.shape)))
        skips = feats.maps
        if self.bridge is not None:
            skips = self.bridge(feats.maps)
            if trace is not None:
                _, seq = flatten_concat(feats.maps, self.bridge.dim)
                trace.append(("bridge.sequence", (x.shape[0], sum(seq.lengths), seq.dim)))
                for i, m in enumerate(skips):
                    trace.append((f"bridge.out{i + 1}", tuple(m.shape)))
        y = skips[3]
        for i, stage in enumerate(self.decoder):
            y = stage(y, skips[2 - i])
            if trace is not None:
                trace.append((f"decoder.stage{i + 1}", tuple(y.shape)))
        logits = self.head(y)
        if trace is not None:
            trace.append(("head.logits", tuple(logits.shape)))
        return logits


def build_model(cfg: ModelConfig, seed: int = 0) -> SegModel:
    """Deterministic build: identical (cfg, seed) gives identical weights."""
    return SegModel(cfg, make_rng(seed))


def parameter_count(cfg_or_model, seed: int = 0) -> int:
    model = cfg_or_model
    if isinstance(cfg_or_model, ModelConfig):
        model = build_model(cfg_or_model, seed)
    return model.parameter_count()


def shape_trace(model: SegModel, image_size: int, batch: int = 1) -> list[tuple[str, tuple]]:
    """Run one forward on zeros and record every module boundary shape."""
    from .autodiff import Variable, no_grad

    x = Variable(np.zeros((batch, model.cfg.in_channels, image_size, image_size),
                          dtype=model.cfg.dtype))
    trace: list[tuple[str, tuple]] = [("input", tuple(x.shape))]
    with no_grad():
        model(x, trace=trace)
    return trace


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: SegModel, config_text: str) -> None:
    """TCCK layout: magic, u64 config length + utf-8 config echo, u32 tensor
    count, then (u32 name length, name, TCTN tensor) per state tensor in
    serialization order."""
    tensors = model.state_tensors()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        blob = config_text.encode("utf-8")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            Tensor(arr).write_to(f)


def read_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    """Returns (config echo text, tensors by name); validates structure."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise IntegrityError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        head = f.read(8)
        if len(head) != 8:
            raise IntegrityError("truncated checkpoint header")
        (config_len,) = struct.unpack("<Q", head)
        blob = f.read(config_len)
        if len(blob) != config_len:
            raise IntegrityError("truncated checkpoint config echo")
        config_text = blob.decode("utf-8")
        head = f.read(4)
        if len(head) != 4:
            raise IntegrityError("truncated checkpoint tensor count")
        (count,) = struct.unpack("<I", head)
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            head = f.read(4)
            if len(head) != 4:
                raise IntegrityError("truncated checkpoint tensor name")
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            tensors[name] = Tensor.read_from(f).array
        if f.read(1):
            raise IntegrityError("trailing bytes after checkpoint payload")
    return config_text, tensors


def load_weights(model: SegModel, tensors: dict[str, np.ndarray]) -> None:
    """Shape-validated weight load; raises naming the offending tensor."""
    model.load_state_tensors(tensors)
