"""Float64 tensors with tape-based reverse-mode differentiation.

Every op records its inputs and a closure that maps the upstream gradient to
gradients for those inputs. Nodes carry a creation counter, so sorting the
reachable nodes by that counter recovers construction order and ``backward``
simply walks it in reverse.

Broadcasting is deliberately narrow: binary ops accept equal shapes or a
0-d/Python scalar on one side. Row-wise bias adds and per-row scaling go
through dedicated ops (``linear``, ``grouped_linear``, ``expand``).
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class NumericalError(FloatingPointError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


_all = np.logical_and.reduce


def _check_finite(value: np.ndarray, op: str) -> None:
    if not _all(np.isfinite(value), axis=None):
        raise NumericalError(f"non-finite value produced by {op}")


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block; every result is a constant."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "op", "id", "name")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64)
        _check_finite(arr, "leaf")
        arr.flags.writeable = False
        self.value = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def detach(self) -> Tensor:
        return Tensor(self.value)

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, op={self.op})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)


class Parameter(Tensor):
    """A named leaf that receives gradients and is updated by optimizers."""

    __slots__ = ("grad",)

    def __init__(self, value, name: str | None = None):
        super().__init__(value, requires_grad=True, name=name)
        self.grad: np.ndarray | None = None

    def assign(self, value: np.ndarray) -> None:
        arr = np.array(value, dtype=np.float64)
        if arr.shape != self.value.shape:
            raise ShapeError(f"cannot assign {arr.shape} to parameter of shape {self.value.shape}")
        _check_finite(arr, f"assign({self.name})")
        arr.flags.writeable = False
        self.value = arr


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    _check_finite(value, op)
    out = Tensor.__new__(Tensor)
    value.flags.writeable = False
    out.value = value
    out.name = None
    out.op = op
    out.id = next(_ids)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# ---------------------------------------------------------------- backward


def backward(root: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray]:
    """Reverse sweep from a scalar ``root``.

    Returns one gradient per entry of ``params`` (zeros for parameters the
    root does not depend on) and stores it on ``Parameter.grad``. With
    ``params=None`` every reachable Parameter is returned, in creation order.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [root] if root.requires_grad else []
    while stack:
        node = stack.pop()
        if node.id in nodes:
            continue
        nodes[node.id] = node
        stack.extend(p for p in node.parents if p.requires_grad and p.id not in nodes)

    grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
    leaf_grads: dict[int, np.ndarray] = {}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = grads.pop(node_id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            leaf_grads[node_id] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg

    if params is None:
        params = [nodes[i] for i in sorted(leaf_grads) if isinstance(nodes[i], Parameter)]
    out = []
    for p in params:
        g = leaf_grads.get(p.id)
        g = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
        if isinstance(p, Parameter):
            p.grad = g
        out.append(g)
    return out


# ---------------------------------------------------------------- binary


def _binary(a, b, op: str):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = _binary(a, b, "add")
    return _node(a.value + b.value, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b, "sub")
    return _node(a.value - b.value, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        return scale(a, b)
    if _is_scalar(a):
        return scale(b, a)
    a, b = _binary(a, b, "mul")
    av, bv = a.value, b.value
    return _node(av * bv, (a, b),
                 lambda g: (_reduce_to(g * bv, a.shape), _reduce_to(g * av, b.shape)), "mul")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _node(x.value * c, (x,), lambda g: (g * c,), "scale")


def neg(x) -> Tensor:
    return scale(x, -1.0)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``b`` added to every row."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: cannot apply {w.shape} weights to {x.shape} input")
    xv, wv = x.value, w.value
    out = xv @ wv
    if b is None:
        return _node(out, (x, w), lambda g: (g @ wv.T, xv.T @ g), "linear")
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match width {w.shape[1]}")
    return _node(out + b.value, (x, w, b),
                 lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)), "linear")


def grouped_linear(x, w, b=None) -> Tensor:
    """Independent affine map per group: ``out[n, i] = x[n, i] @ w[i] + b[i]``.

    ``x`` is (N, G, k), ``w`` is (G, k, h), ``b`` is (G, h). Equivalent to a
    kernel-width-1 convolution with G groups.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[0] or x.shape[2] != w.shape[1]:
        raise ShapeError(f"grouped_linear: {w.shape} weights incompatible with {x.shape} input")
    xg = np.ascontiguousarray(x.value.transpose(1, 0, 2))  # (G, N, k)
    wv = w.value
    out = np.matmul(xg, wv).transpose(1, 0, 2)

    def grads(g):
        gg = np.ascontiguousarray(g.transpose(1, 0, 2))  # (G, N, h)
        dx = np.matmul(gg, wv.transpose(0, 2, 1)).transpose(1, 0, 2)
        dw = np.matmul(xg.transpose(0, 2, 1), gg)
        return dx, dw, g.sum(axis=0)

    if b is None:
        return _node(np.ascontiguousarray(out), (x, w), lambda g: grads(g)[:2], "grouped_linear")
    b = as_tensor(b)
    if b.shape != (w.shape[0], w.shape[2]):
        raise ShapeError(f"grouped_linear: bias shape {b.shape} != {(w.shape[0], w.shape[2])}")
    return _node(out + b.value, (x, w, b), grads, "grouped_linear")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _node(np.ascontiguousarray(x.value.T), (x,), lambda g: (g.T,), "transpose")


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _node(out.copy(), (x,), lambda g: (g.reshape(old),), "reshape")


def expand(x, axis: int, n: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``n`` times along it."""
    x = as_tensor(x)
    out = np.repeat(np.expand_dims(x.value, axis), n, axis=axis)
    return _node(out, (x,), lambda g: (g.sum(axis=axis),), "expand")


# ---------------------------------------------------------------- elementwise


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.value > 0, 1.0, slope)
    return _node(x.value * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.value)
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def softplus(x) -> Tensor:
    """``log(1 + exp(x))`` without overflow."""
    x = as_tensor(x)
    s = _sigmoid(x.value)
    return _node(np.logaddexp(0.0, x.value), (x,), lambda g: (g * s,), "softplus")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.value)  # overflow surfaces as NumericalError below
    return _node(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if (x.value <= 0).any():
        raise DomainError("log of a non-positive value")
    xv = x.value
    return _node(np.log(xv), (x,), lambda g: (g / xv,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if (x.value < 0).any():
        raise DomainError("sqrt of a negative value")
    y = np.sqrt(x.value)
    # subgradient 0 at the origin
    inv = np.divide(0.5, y, out=np.zeros_like(y), where=y > 0)
    return _node(y, (x,), lambda g: (g * inv,), "sqrt")


def square(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _node(xv * xv, (x,), lambda g: (2.0 * g * xv,), "square")


# ---------------------------------------------------------------- reductions


def _restore(g: np.ndarray, shape: tuple[int, ...], axis) -> np.ndarray:
    if axis is None:
        return np.full(shape, float(g))
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    return _node(np.asarray(x.value.sum(axis=axis)), (x,),
                 lambda g: (_restore(g, shape, axis),), "sum")


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = x.size if axis is None else shape[axis]
    return _node(np.asarray(x.value.mean(axis=axis)), (x,),
                 lambda g: (_restore(g, shape, axis) / n,), "mean")


def sum_squares(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _node(np.asarray((xv * xv).sum(axis=axis)), (x,),
                 lambda g: (2.0 * _restore(g, xv.shape, axis) * xv,), "sum_squares")


def max_with_index(x, axis: int) -> tuple[Tensor, np.ndarray]:
    """Maximum along ``axis`` and its argmax; ties go to the lowest index.

    The gradient is routed entirely to the argmax entry.
    """
    x = as_tensor(x)
    idx = np.argmax(x.value, axis=axis)
    vals = np.take_along_axis(x.value, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = x.shape

    def grads(g):
        out = np.zeros(shape)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _node(np.ascontiguousarray(vals), (x,), grads, "max"), idx


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.value - x.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _node(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ---------------------------------------------------------------- indexing


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    try:
        out = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    splits = np.cumsum(sizes)[:-1]
    return _node(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def take(x, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    x = as_tensor(x)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    shape = x.shape

    def grads(g):
        out = np.zeros(shape)
        out[sl] = g
        return (out,)

    return _node(x.value[sl].copy(), (x,), grads, "take")


def pick(x, index: np.ndarray) -> Tensor:
    """Row-wise gather from a matrix: ``out[n] = x[n, index[n]]``."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: index {index.shape} incompatible with {x.shape}")
    if (index < 0).any() or (index >= x.shape[1]).any():
        raise IndexError("pick: index out of range")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def grads(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return _node(x.value[rows, index].copy(), (x,), grads, "pick")
