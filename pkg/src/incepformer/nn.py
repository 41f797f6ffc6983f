"""Parameter-holding layers on top of the autodiff ops.

Modules register parameters/submodules simply by attribute assignment;
`named_parameters` walks `__dict__` in insertion order, so construction
order fixes both rng draw order and checkpoint serialization order.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Variable, parameter
from .tensor import DimensionError, trunc_normal

def glorot_std(fan_in: int, fan_out: int) -> float:
    """Fan-scaled std for truncated-normal weight init. A flat tiny std starves
    the trunk through non-normalized projections (decoder fuse, head) and the
    desk overfit never leaves the background collapse."""
    return (2.0 / (fan_in + fan_out)) ** 0.5


class Module:
    def named_parameters(self, prefix: str = ""):
        """Yield (dotted_name, Variable) pairs in construction order."""
        for attr, value in self.__dict__.items():
            name = f"{prefix}{attr}" if prefix else attr
            yield from _walk_params(name, value)

    def parameters(self) -> list[Variable]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = ""):
        yield prefix, self
        for attr, value in self.__dict__.items():
            name = f"{prefix}.{attr}" if prefix else attr
            yield from _walk_modules(name, value)

    def set_training(self, training: bool) -> None:
        """Flip batch-stat consumption (train vs running) everywhere."""
        for _, m in self.named_modules():
            if hasattr(m, "training"):
                m.training = bool(training)

    def set_update_running(self, flag: bool) -> None:
        """Freeze/unfreeze running-stat accumulation (used by grad checks)."""
        for _, m in self.named_modules():
            if hasattr(m, "update_running"):
                m.update_running = bool(flag)

    def to_dtype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place; returns self."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype, copy=False)
        for _, m in self.named_modules():
            for buf in getattr(m, "_buffers", ()):
                arr = getattr(m, buf)
                setattr(m, buf, arr.astype(dtype, copy=False))
        return self

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus norm buffers, in serialization order."""
        out = [(name, p.data) for name, p in self.named_parameters()]
        for mname, m in self.named_modules():
            for buf in getattr(m, "_buffers", ()):
                out.append((f"{mname}.{buf}" if mname else buf, getattr(m, buf)))
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state_tensors()
        own_names = [n for n, _ in own]
        missing = [n for n in own_names if n not in tensors]
        extra = [n for n in tensors if n not in set(own_names)]
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        by_name = dict(own)
        params = {name: p for name, p in self.named_parameters()}
        for name, arr in tensors.items():
            target = by_name[name]
            if tuple(arr.shape) != tuple(target.shape):
                raise DimensionError(
                    f"tensor {name!r} has shape {tuple(arr.shape)}, expected {tuple(target.shape)}")
            if name in params:
                params[name].data = arr.astype(target.dtype, copy=False)
            else:
                target[...] = arr.astype(target.dtype, copy=False)


def _walk_params(name: str, value):
    if isinstance(value, Variable):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_params(f"{name}.{i}", item)


def _walk_modules(name: str, value):
    if isinstance(value, Module):
        yield from value.named_modules(prefix=name)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_modules(f"{name}.{i}", item)


class ModuleList(Module):
    def __init__(self, items=()):
        for i, m in enumerate(items):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self.__dict__.values())

    def __getitem__(self, i):
        return self.__dict__[str(i)]

    def __len__(self):
        return len(self.__dict__)


class Linear(Module):
    """y = x @ w + b over the trailing axis; truncated-normal init."""

    def __init__(self, d_in: int, d_out: int, rng, bias: bool = True):
        self.w = parameter(trunc_normal(rng, (d_in, d_out), glorot_std(d_in, d_out)))
        self.b = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return ops.affine(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1,
                 pad: int = 0, groups: int = 1, bias: bool = True):
        if c_in % groups or c_out % groups:
            raise DimensionError(f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
        self.stride, self.pad, self.groups = stride, pad, groups
        std = glorot_std(c_in // groups * k * k, c_out * k * k)
        self.w = parameter(trunc_normal(rng, (c_out, c_in // groups, k, k), std))
        self.b = parameter(np.zeros(c_out)) if bias else None

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad,
                          groups=self.groups)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = ops.NORM_EPS):
        self.eps = eps
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def __call__(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm(Module):
    """Channel-axis batch norm with running statistics (biased variance)."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = ops.NORM_EPS):
        self.momentum = momentum
        self.eps = eps
        self.training = True
        self.update_running = True
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, training=self.training,
                              momentum=self.momentum, eps=self.eps,
                              update_running=self.update_running)


class ConvBnAct(Module):
    """conv (no bias) -> batch norm -> activation; building block of the
    multi-branch merging paths."""

    def __init__(self, c_in: int, c_out: int, k: int, rng, stride: int = 1,
                 pad: int = 0, act: str = "silu"):
        self.conv = Conv2d(c_in, c_out, k, rng, stride=stride, pad=pad, bias=False)
        self.bn = BatchNorm(c_out)
        self.act = act

    def __call__(self, x):
        return ops.activation(self.bn(self.conv(x)), self.act)


class FeedForward(Module):
    """Position-wise MLP with expansion 4 and gelu."""

    def __init__(self, dim: int, rng, expansion: int = 4):
        self.fc1 = Linear(dim, dim * expansion, rng)
        self.fc2 = Linear(dim * expansion, dim, rng)

    def __call__(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))
