"""Flat key=value run configuration.

One key per line, `#` comments allowed, unknown keys rejected by name.
Canonical serialization sorts keys and is a fixed point under
parse -> serialize -> parse.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    variant: str = "full"            # effformer | s | rm | rmi | full
    in_channels: int = 3             # image channels
    base_dim: int = 8                # stage dims become C,2C,5C,8C
    num_classes: int = 4             # labels incl. background
    layer_list: tuple = (3, 8, 3)    # transformer depth per merge stage
    branch_list: tuple = (3, 3, 3)   # merge branches per stage (2 or 3)
    heads: tuple = (1, 2, 5, 8)      # attention heads per stage
    bridge: str = "cttt"             # cttt | tttt | ctct | para
    bridge_reduction: int = 1        # token-aware key/value reduction ratio
    bridge_final_ffn: bool = True    # per-stage FFN after the last bridge layer
    use_crpe: bool = True            # relative position term in encoder attention
    iff_reduction: int = 4           # squeeze ratio of the gated fusion
    decoder_depth: int = 2           # transformer blocks per decoder stage
    precision: str = "float32"       # float32 | float64
    # data / training
    image_size: int = 32             # square extent, divisible by 32
    seed: int = 1                    # master seed (corpus, init, batching)
    optimizer: str = "sgd"           # sgd | adam
    lr: float = 0.05                 # initial learning rate
    lr_min: float = 0.0004           # cosine floor
    schedule: str = "cosine"         # cosine | poly | constant
    momentum: float = 0.9            # sgd momentum
    weight_decay: float = 0.0        # L2 coefficient added to gradients
    steps: int = 500                 # optimization steps
    batch_size: int = 16             # samples per step
    corpus_size: int = 16            # synthetic samples generated
    augment: bool = False            # random 1-4 augmentation ops per draw


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw not in ("true", "false"):
                raise ValueError(f"expected true|false, got {raw!r}")
            return raw == "true"
        if kind == "tuple":
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for key '{key}': {exc}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        if key in seen:
            raise ConfigError(f"duplicate config key '{key}'")
        seen.add(key)
        setattr(cfg, key, _parse_value(key, raw))
    validate_run_config(cfg)
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{name}={_format_value(getattr(cfg, name))}" for name in sorted(_FIELDS)]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def validate_run_config(cfg: RunConfig) -> RunConfig:
    try:
        to_model_config(cfg).validate()
    except ValueError as exc:  # uniform error surface for config consumers
        raise ConfigError(str(exc)) from None
    if cfg.image_size % 32:
        raise ConfigError(
            f"image_size must be divisible by 32 (five halvings), got {cfg.image_size}")
    if cfg.optimizer not in ("sgd", "adam"):
        raise ConfigError(f"optimizer must be sgd|adam, got '{cfg.optimizer}'")
    if cfg.schedule not in ("cosine", "poly", "constant"):
        raise ConfigError(f"schedule must be cosine|poly|constant, got '{cfg.schedule}'")
    if cfg.steps < 1 or cfg.corpus_size < 1:
        raise ConfigError("steps and corpus_size must be >= 1")
    if cfg.batch_size < 1 or cfg.batch_size > cfg.corpus_size:
        raise ConfigError(
            f"batch_size must be in [1, corpus_size], got {cfg.batch_size} "
            f"with corpus_size {cfg.corpus_size}")
    if cfg.lr <= 0 or cfg.lr_min < 0:
        raise ConfigError("lr must be positive and lr_min non-negative")
    return cfg


def to_model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(
        variant=cfg.variant,
        in_channels=cfg.in_channels,
        base_dim=cfg.base_dim,
        num_classes=cfg.num_classes,
        layer_list=tuple(cfg.layer_list),
        branch_list=tuple(cfg.branch_list),
        heads=tuple(cfg.heads),
        bridge=cfg.bridge,
        bridge_reduction=cfg.bridge_reduction,
        bridge_final_ffn=cfg.bridge_final_ffn,
        use_crpe=cfg.use_crpe,
        iff_reduction=cfg.iff_reduction,
        decoder_depth=cfg.decoder_depth,
        precision=cfg.precision,
    )
