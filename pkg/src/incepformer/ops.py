"""Differentiable primitives over Variables.

Every op validates its preconditions, computes with numpy (conv goes
through the selected kernel backend), wires the backward closure, and
reports its arithmetic cost to the active flop counter. Convention:
one multiply-accumulate = 2 flops; elementwise kinds use small documented
per-element constants, so log-log complexity fits are driven by the exact
contraction terms.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from . import kernels
from .autodiff import Variable, as_variable, make_op
from .tensor import DimensionError

NORM_EPS = 1e-5

# -- flop counting -----------------------------------------------------------

_counter = None


class FlopCounter:
    def __init__(self):
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += n
        self.by_op[op] = self.by_op.get(op, 0) + n


@contextmanager
def count_flops():
    """Count flops of every primitive executed inside the context."""
    global _counter
    previous = _counter
    _counter = FlopCounter()
    try:
        yield _counter
    finally:
        _counter = previous


def _flops(op: str, n: int) -> None:
    if _counter is not None:
        _counter.add(op, int(n))


# -- helpers -----------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_same_dtype(op: str, *vars_: Variable) -> None:
    dtypes = {v.data.dtype for v in vars_}
    if len(dtypes) > 1:
        raise TypeError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    _check_same_dtype("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)
    m, k, n = a.data.shape[-2], a.data.shape[-1], b.data.shape[-1]
    batch = out.size // (m * n) if out.size else 0
    _flops("matmul", 2 * batch * m * k * n)

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape)
        return ga, gb

    return make_op(out, (a, b), backward_fn, "matmul")


def affine(x, w, b=None) -> Variable:
    """y[..., j] = sum_i x[..., i] w[i, j] (+ b[j])."""
    x, w = as_variable(x), as_variable(w)
    if w.data.ndim != 2:
        raise DimensionError(f"affine weight must be rank 2, got {w.shape}")
    d_in, d_out = w.data.shape
    if x.data.shape[-1] != d_in:
        raise DimensionError(f"affine input depth {x.data.shape[-1]} != weight depth {d_in}")
    _check_same_dtype("affine", x, w)
    lead = x.data.shape[:-1]
    xm = np.ascontiguousarray(x.data.reshape(-1, d_in))
    ym = xm @ w.data
    rows = xm.shape[0]
    _flops("affine", 2 * rows * d_in * d_out)
    inputs = [x, w]
    if b is not None:
        b = as_variable(b)
        if b.data.shape != (d_out,):
            raise DimensionError(f"affine bias shape {b.shape} != ({d_out},)")
        ym = ym + b.data
        _flops("affine", rows * d_out)
        inputs.append(b)
    out = ym.reshape(*lead, d_out)

    def backward_fn(g):
        gm = g.reshape(-1, d_out)
        gx = (gm @ w.data.T).reshape(x.data.shape)
        gw = xm.T @ gm
        if b is not None:
            return gx, gw, gm.sum(axis=0)
        return gx, gw

    return make_op(out, tuple(inputs), backward_fn, "affine")


def conv2d(x, w, bias=None, stride=1, pad=0, groups=1) -> Variable:
    """Grouped 2-D convolution; output extent = floor((H - k + 2p)/s) + 1.

    groups = C_in with C_out = C_in is the depthwise case.
    """
    x, w = as_variable(x), as_variable(w)
    _check_same_dtype("conv2d", x, w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    b_, cin, h, wd = x.data.shape
    cout, cing, k, k2 = w.data.shape
    if k != k2:
        raise DimensionError(f"conv2d kernels must be square, got {k}x{k2}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d needs stride >= 1 and pad >= 0, got s={stride} p={pad}")
    if cin % groups or cout % groups:
        raise DimensionError(f"conv2d groups={groups} must divide C_in={cin} and C_out={cout}")
    if cing != cin // groups:
        raise DimensionError(f"conv2d weight in-depth {cing} != C_in/groups = {cin // groups}")
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise DimensionError(f"kernel {k} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}")
    xc = np.ascontiguousarray(x.data)
    wc = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(xc, wc, stride, pad, groups)
    ho, wo = out.shape[2], out.shape[3]
    _flops("conv2d", 2 * b_ * cout * ho * wo * cing * k * k)
    inputs = [x, w]
    if bias is not None:
        bias = as_variable(bias)
        if bias.data.shape != (cout,):
            raise DimensionError(f"conv2d bias shape {bias.shape} != ({cout},)")
        out = out + bias.data[:, None, None]
        _flops("conv2d", b_ * cout * ho * wo)
        inputs.append(bias)

    def backward_fn(g):
        gc = np.ascontiguousarray(g)
        gx, gw = kernels.conv2d_backward(xc, wc, gc, stride, pad, groups)
        if bias is not None:
            return gx, gw, gc.sum(axis=(0, 2, 3))
        return gx, gw

    return make_op(out, tuple(inputs), backward_fn, "conv2d")


# -- activations and pointwise math ------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def activation(x, kind: str) -> Variable:
    """Pointwise nonlinearity: relu | gelu | silu | sigmoid.

    gelu uses the tanh form 0.5x(1 + tanh(c(x + 0.044715 x^3))).
    """
    x = as_variable(x)
    v = x.data
    if kind == "relu":
        out = np.maximum(v, 0)
        _flops("activation", v.size)

        def backward_fn(g):
            return ((v > 0).astype(v.dtype) * g,)
    elif kind == "sigmoid":
        out = _sigmoid(v)
        _flops("activation", 4 * v.size)

        def backward_fn(g, y=out):
            return (g * y * (1.0 - y),)
    elif kind == "silu":
        s = _sigmoid(v)
        out = v * s
        _flops("activation", 5 * v.size)

        def backward_fn(g, s=s):
            return (g * (s * (1.0 + v * (1.0 - s))),)
    elif kind == "gelu":
        u = _GELU_C * (v + _GELU_A * v ** 3)
        t = np.tanh(u)
        out = 0.5 * v * (1.0 + t)
        _flops("activation", 10 * v.size)

        def backward_fn(g, t=t):
            du = _GELU_C * (1.0 + 3.0 * _GELU_A * v ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * du),)
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return make_op(out, (x,), backward_fn, f"activation[{kind}]")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def relu(x):
    return activation(x, "relu")


def gelu(x):
    return activation(x, "gelu")


def silu(x):
    return activation(x, "silu")


def sigmoid(x):
    return activation(x, "sigmoid")


def log(x) -> Variable:
    x = as_variable(x)
    out = np.log(x.data)
    _flops("log", x.size)

    def backward_fn(g):
        return (g / x.data,)

    return make_op(out, (x,), backward_fn, "log")


def exp(x) -> Variable:
    x = as_variable(x)
    out = np.exp(x.data)
    _flops("exp", x.size)

    def backward_fn(g, y=out):
        return (g * y,)

    return make_op(out, (x,), backward_fn, "exp")


def _axis_index(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def softmax(x, axis=-1) -> Variable:
    """Max-subtracted softmax along `axis`; rows sum to one."""
    x = as_variable(x)
    ax = _axis_index(axis, x.data.ndim, "softmax")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)
    _flops("softmax", 5 * x.size)

    def backward_fn(g, y=out):
        return (y * (g - (g * y).sum(axis=ax, keepdims=True)),)

    return make_op(out, (x,), backward_fn, "softmax")


def log_softmax(x, axis=-1) -> Variable:
    x = as_variable(x)
    ax = _axis_index(axis, x.data.ndim, "log_softmax")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    _flops("log_softmax", 5 * x.size)

    def backward_fn(g, y=out):
        return (g - np.exp(y) * g.sum(axis=ax, keepdims=True),)

    return make_op(out, (x,), backward_fn, "log_softmax")


# -- normalization -----------------------------------------------------------


def layer_norm(x, gamma, beta, eps=NORM_EPS) -> Variable:
    """Normalize over the trailing (channel) axis, then affine."""
    x, gamma, beta = as_variable(x), as_variable(gamma), as_variable(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(f"layer_norm affine shape must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data
    _flops("layer_norm", 8 * x.size)

    def backward_fn(g):
        dxhat = g * gamma.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.data.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(out, (x, gamma, beta), backward_fn, "layer_norm")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=NORM_EPS, update_running=True) -> Variable:
    """Normalize over all axes except 1 (the channel axis).

    Training mode uses biased batch statistics and, unless frozen, folds
    them into the running arrays in place; eval mode uses the running ones.
    """
    x, gamma, beta = as_variable(x), as_variable(gamma), as_variable(beta)
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(f"batch_norm affine shape must be ({c},)")
    axes = (0,) + tuple(range(2, x.data.ndim))
    bshape = (1, c) + (1,) * (x.data.ndim - 2)
    gb = gamma.data.reshape(bshape)
    bb = beta.data.reshape(bshape)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        if update_running:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(c)
    else:
        mu = running_mean.reshape(bshape)
        var = running_var.reshape(bshape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gb + bb
    _flops("batch_norm", 8 * x.size)

    def backward_fn(g):
        dxhat = g * gb
        if training:
            gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = dxhat * inv
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_op(out, (x, gamma, beta), backward_fn, "batch_norm")


# -- shape ops ----------------------------------------------------------------


def reshape(x, shape) -> Variable:
    x = as_variable(x)
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape {x.shape} -> {shape}: {exc}") from None

    def backward_fn(g):
        return (g.reshape(x.data.shape),)

    return make_op(out, (x,), backward_fn, "reshape")


def permute(x, axes) -> Variable:
    x = as_variable(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise DimensionError(f"permute axes {axes} are not a permutation of rank {x.data.ndim}")
    out = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return make_op(out, (x,), backward_fn, "permute")


def concat(parts, axis=0) -> Variable:
    parts = [as_variable(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero parts")
    ndim = parts[0].data.ndim
    ax = _axis_index(axis, ndim, "concat")
    base = list(parts[0].data.shape)
    for p in parts[1:]:
        other = list(p.data.shape)
        if len(other) != ndim or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise DimensionError(f"concat extent mismatch: {parts[0].shape} vs {p.shape} on axis {ax}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    sizes = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        sl = [slice(None)] * ndim
        grads = []
        for i in range(len(parts)):
            sl[ax] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return make_op(out, tuple(parts), backward_fn, "concat")


def split(x, sizes, axis=0) -> list[Variable]:
    """Inverse of concat: recorded part lengths along `axis`."""
    x = as_variable(x)
    ax = _axis_index(axis, x.data.ndim, "split")
    if sum(sizes) != x.data.shape[ax]:
        raise DimensionError(f"split sizes {list(sizes)} do not sum to extent {x.data.shape[ax]}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for i, size in enumerate(sizes):
        sl = [slice(None)] * x.data.ndim
        sl[ax] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        part = x.data[sl]

        def backward_fn(g, sl=sl):
            gx = np.zeros_like(x.data)
            gx[sl] = g
            return (gx,)

        outs.append(make_op(part, (x,), backward_fn, "split"))
    return outs


def mean_reduce(x, axis, keepdims=False) -> Variable:
    x = as_variable(x)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(sorted({_axis_index(a, x.data.ndim, "mean_reduce") for a in axes}))
    out = x.data.mean(axis=axes, keepdims=keepdims)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    _flops("reduce", x.size)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.data.shape),)

    return make_op(out, (x,), backward_fn, "mean_reduce")


def sum_reduce(x, axis, keepdims=False) -> Variable:
    x = as_variable(x)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(sorted({_axis_index(a, x.data.ndim, "sum_reduce") for a in axes}))
    out = x.data.sum(axis=axes, keepdims=keepdims)
    _flops("reduce", x.size)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape),)

    return make_op(out, (x,), backward_fn, "sum_reduce")


def sum_all(x) -> Variable:
    x = as_variable(x)
    out = np.asarray(x.data.sum())
    _flops("reduce", x.size)

    def backward_fn(g):
        return (np.broadcast_to(g, x.data.shape),)

    return make_op(out, (x,), backward_fn, "sum_all")


def mean_all(x) -> Variable:
    x = as_variable(x)
    out = np.asarray(x.data.mean())
    n = x.size
    _flops("reduce", x.size)

    def backward_fn(g):
        return (np.broadcast_to(g / n, x.data.shape),)

    return make_op(out, (x,), backward_fn, "mean_all")


def upsample2x_rearrange(x) -> Variable:
    """Sub-pixel upsample: [B, 4C, H, W] -> [B, C, 2H, 2W].

    Channel 4c + 2i + j lands on output (c, 2h+i, 2w+j).
    """
    x = as_variable(x)
    if x.data.ndim != 4 or x.data.shape[1] % 4:
        raise DimensionError(f"upsample2x_rearrange needs [B,4C,H,W], got {x.shape}")
    b, c4, h, w = x.data.shape
    c = c4 // 4
    out = x.data.reshape(b, c, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, 2 * h, 2 * w)

    def backward_fn(g):
        gx = g.reshape(b, c, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4).reshape(b, c4, h, w)
        return (gx,)

    return make_op(out, (x,), backward_fn, "upsample2x_rearrange")


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data + b.data
    _flops("elementwise", out.size)

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_op(out, (a, b), backward_fn, "add")


def sub(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data - b.data
    _flops("elementwise", out.size)

    def backward_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_op(out, (a, b), backward_fn, "sub")


def mul(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data * b.data
    _flops("elementwise", out.size)

    def backward_fn(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return make_op(out, (a, b), backward_fn, "mul")


def div(a, b) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out = a.data / b.data
    _flops("elementwise", out.size)

    def backward_fn(g, y=out):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * y / b.data, b.data.shape))

    return make_op(out, (a, b), backward_fn, "div")


def scale(x, c: float) -> Variable:
    x = as_variable(x)
    c = float(c)
    out = x.data * np.asarray(c, dtype=x.data.dtype)
    _flops("elementwise", out.size)

    def backward_fn(g):
        return (g * np.asarray(c, dtype=g.dtype),)

    return make_op(out, (x,), backward_fn, "scale")


def add_const(x, c: float) -> Variable:
    x = as_variable(x)
    out = x.data + np.asarray(float(c), dtype=x.data.dtype)
    _flops("elementwise", out.size)

    def backward_fn(g):
        return (g,)

    return make_op(out, (x,), backward_fn, "add_const")


def neg(x) -> Variable:
    return scale(x, -1.0)
