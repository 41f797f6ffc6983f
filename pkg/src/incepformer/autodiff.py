"""Reverse-mode automatic differentiation on a dynamic tape.

Each differentiable primitive wires a Node holding its input Variables and
a backward closure. The tape is rebuilt on every forward pass and is
consumable exactly once by `backward`.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, check_finite

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape construction inside the context (pure inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    __slots__ = ("inputs", "backward_fn", "consumed")

    def __init__(self, inputs, backward_fn):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.consumed = False


class Variable:
    """Array enrolled in the autodiff graph.

    `data` is the numpy storage, `grad` the accumulated gradient (allocated
    on first accumulation), `node` the producing tape node (None for leaves).
    `value` exposes the current value as a Tensor without copying.
    """

    __slots__ = ("data", "grad", "node", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.node = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def value(self) -> Tensor:
        return Tensor(self.data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Variable{tag}(shape={self.data.shape}, dtype={self.data.dtype.name})"


def parameter(data, name=None) -> Variable:
    return Variable(data, requires_grad=True, name=name)


def as_variable(x) -> Variable:
    if isinstance(x, Variable):
        return x
    if isinstance(x, Tensor):
        return Variable(x.array)
    return Variable(np.asarray(x))


def make_op(out_array: np.ndarray, inputs, backward_fn, op_name: str) -> Variable:
    """Wrap a primitive's output and wire its tape node.

    `backward_fn(grad_out) -> tuple[np.ndarray | None, ...]` returns one
    gradient per input (None for inputs that need none).
    """
    check_finite(out_array, op_name)
    out = Variable(out_array)
    if _grad_enabled and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        out.node = Node(tuple(inputs), backward_fn)
    return out


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for v in node.inputs:
            if v.node is not None and id(v.node) not in seen:
                stack.append((v.node, False))
    return order


def backward(loss: Variable) -> None:
    """Accumulate d(loss)/d(leaf) into each requiring leaf's `.grad`.

    The loss must be scalar-shaped; the graph below it is consumed and
    cannot be walked twice.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.accumulate_grad(np.ones_like(loss.data))
        return
    if loss.node.consumed:
        raise RuntimeError("graph already consumed by a previous backward pass")

    order = _toposort(loss.node)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    var_of_node: dict[int, Variable] = {}

    # Map each node to the variable it produced by walking from the loss.
    stack = [loss]
    while stack:
        v = stack.pop()
        if v.node is not None and id(v.node) not in var_of_node:
            var_of_node[id(v.node)] = v
            stack.extend(v.node.inputs)

    for node in reversed(order):
        out_var = var_of_node[id(node)]
        g = grads.pop(id(out_var), None)
        node.consumed = True
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for v, gi in zip(node.inputs, input_grads):
            if gi is None or not v.requires_grad:
                continue
            if v.node is None:
                v.accumulate_grad(gi)
            else:
                key = id(v)
                if key in grads:
                    # Allocate instead of += so stored grads that alias
                    # backward_fn views are never mutated in place.
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        node.backward_fn = None  # release closures eagerly


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    ok: bool
    note: str = ""


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def format(self) -> str:
        lines = [f"{'parameter':<48} {'max rel err':>12}  status"]
        for e in self.entries:
            status = "ok" if e.ok else "FAIL"
            note = f" ({e.note})" if e.note else ""
            lines.append(f"{e.name:<48} {e.max_rel_err:>12.3e}  {status}{note}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} "
                     f"(max rel err {self.max_rel_err:.3e}, tol {self.tol:g})")
        return "\n".join(lines)


def _rel_err(a: float, b: float, floor: float = 1e-3) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(f, params, eps=1e-4, tol=1e-4, mode="exhaustive", rng=None) -> GradCheckReport:
    """Compare analytic gradients of `f()` against central differences.

    f: nullary callable returning a scalar Variable (closing over `params`).
    params: iterable of (name, Variable) or Variables.
    mode: "exhaustive" perturbs every coordinate; "directional" perturbs a
    seeded random unit direction per parameter tensor (2 evals each).
    """
    named = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            named.append(p)
        else:
            named.append((p.name or f"param{i}", p))

    for _, p in named:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in named}

    def eval_loss() -> float:
        with no_grad():
            return float(f().data.reshape(()))

    report = GradCheckReport(tol=tol, eps=eps)
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(0))

    for name, p in named:
        base = p.data
        a = analytic[name]
        worst = 0.0
        note = ""
        ok = True
        if mode == "exhaustive":
            for idx in np.ndindex(base.shape):
                keep = base[idx]
                base[idx] = keep + eps
                f_plus = eval_loss()
                base[idx] = keep - eps
                f_minus = eval_loss()
                base[idx] = keep
                fd = (f_plus - f_minus) / (2.0 * eps)
                if not (np.isfinite(fd) and np.isfinite(a[idx])):
                    ok = False
                    note = "non-finite estimate"
                    worst = float("inf")
                    break
                worst = max(worst, _rel_err(float(a[idx]), fd))
        elif mode == "directional":
            u = rng.normal(size=base.shape)
            u /= max(np.linalg.norm(u), 1e-30)
            u = u.astype(base.dtype)
            saved = base.copy()
            p.data = saved + eps * u
            f_plus = eval_loss()
            p.data = saved - eps * u
            f_minus = eval_loss()
            p.data = saved
            fd = (f_plus - f_minus) / (2.0 * eps)
            proj = float((a * u).sum())
            if not (np.isfinite(fd) and np.isfinite(proj)):
                ok = False
                note = "non-finite estimate"
                worst = float("inf")
            else:
                worst = _rel_err(proj, fd)
        else:
            raise ValueError(f"unknown grad_check mode {mode!r}")
        if ok:
            ok = worst < tol
        report.entries.append(GradCheckEntry(name=name, max_rel_err=worst, ok=ok, note=note))
    return report
