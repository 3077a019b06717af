"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Define-by-run: every operation on a :class:`Tensor` records a tape node
holding the op kind, parent tensors and a VJP closure. ``backward`` on a
scalar walks the recorded nodes in reverse creation order (which is a
topological order by construction) and accumulates gradients into the
``grad`` attribute of leaf tensors.

Everything is float64 and at most 2-D. Any op producing a NaN/Inf raises
immediately instead of propagating garbage.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np
from scipy import special as _special


class TensorError(Exception):
    pass


class ShapeError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


_state = threading.local()
_seq = itertools.count()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling tape recording (thread-local)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class TapeNode:
    """Autograd record: op kind, parents, and the VJP closure.

    ``seq`` is the creation index; reverse creation order is a valid
    topological order because ops only consume already-created tensors.
    """

    __slots__ = ("op", "parents", "vjp", "seq")

    def __init__(self, op: str, parents: tuple, vjp: Callable):
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.seq = next(_seq)


class Tensor:
    __slots__ = ("data", "node", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("non-finite values in tensor input")
        self.data = arr
        self.node: TapeNode | None = None
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def needs_grad(self) -> bool:
        return self.requires_grad or self.node is not None

    def __repr__(self):
        return f"Tensor({self.data!r})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, out: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite output of op '{op}'")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.requires_grad = False
    t.node = None
    if _grad_enabled() and any(p.needs_grad() for p in parents):
        t.node = TapeNode(op, parents, vjp)
    return t


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast to reach ``grad.shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(
        "add", out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(
        "sub", out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return _make(
        "mul", out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        "div", out, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


# ---------------------------------------------------------------------------
# elementwise unary ops


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return _make("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make("relu", out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _special.expit(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)) computed as -logaddexp(0, -a); stable for |a| up to ~1e308."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    s = _special.expit(-a.data)  # 1 - sigmoid(a)
    return _make("log_sigmoid", out, (a,), lambda g: (g * s,))


def erf(a) -> Tensor:
    a = as_tensor(a)
    out = _special.erf(a.data)
    return _make(
        "erf", out, (a,),
        lambda g: (g * (2.0 / np.sqrt(np.pi)) * np.exp(-a.data * a.data),),
    )


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi] with straight-through gradient inside, zero outside."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", out, (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).copy(),)

    return _make("sum", np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True) if a.size else np.asarray(0.0)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    if not keepdims and axis is not None:
        out = np.squeeze(out, axis=axis)
    elif axis is None:
        out = np.asarray(out).reshape(() if not keepdims else out.shape)
    soft = shifted / total

    def vjp(g):
        if axis is None:
            return (g * soft,)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (ge * soft,)

    return _make("logsumexp", np.asarray(out), (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _make("softmax", out, (a,), vjp)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return _make("cumsum", out, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _make(
        "matmul", out, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def affine(x, w, b) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis if axis >= 0 else t.data.ndim + axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", out, tuple(tensors), vjp)


def take_slice(a, key) -> Tensor:
    """Basic (non-fancy) slicing; gradient scatters back into zeros."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make("slice", np.asarray(out), (a,), vjp)


def take_along(a, idx: np.ndarray, axis: int = -1) -> Tensor:
    """Gather along an axis with integer indices (constant, no gradient to idx)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, _along_index(idx, a.data.ndim, axis), g)
        return (full,)

    return _make("gather", out, (a,), vjp)


def _along_index(idx: np.ndarray, ndim: int, axis: int):
    axis = axis % ndim
    ix = []
    for d in range(ndim):
        if d == axis:
            ix.append(idx)
        else:
            shape = [1] * idx.ndim
            shape[d] = idx.shape[d]
            ix.append(np.arange(idx.shape[d]).reshape(shape))
    return tuple(ix)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select by a constant boolean mask; gradient flows to the chosen branch."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    out = np.where(cond, a.data, b.data)

    def vjp(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        )

    return _make("where", out, (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T.copy(),))


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar ``root`` into leaf ``grad`` attributes.

    Each call recomputes gradients from scratch (previous ``grad`` values on
    the reachable leaves are overwritten, not accumulated across calls).
    """
    if root.data.shape != ():
        raise ShapeError(f"backward requires a scalar root, got shape {root.shape}")
    if root.node is None:
        if root.requires_grad:
            root.grad = np.asarray(1.0)
        return

    nodes: list[tuple[TapeNode, Tensor]] = []
    seen: set[int] = set()
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t.node is not None:
            nodes.append((t.node, t))
            stack.extend(t.node.parents)
        elif t.requires_grad:
            t.grad = None  # reset; accumulated below

    grads: dict[int, np.ndarray] = {id(root): np.asarray(1.0)}
    for node, t in sorted(nodes, key=lambda nt: nt[0].seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.needs_grad():
                continue
            if parent.node is not None:
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
            else:  # leaf
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
