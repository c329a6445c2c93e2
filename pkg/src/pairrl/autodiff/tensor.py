"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` is a node on an implicit tape: every op records its
parents and a closure mapping the upstream gradient to one gradient per
parent. :func:`backward` walks the graph in reverse topological order.

Values are immutable (numpy arrays are flagged read-only), so ops never
mutate their inputs and forward recomputation is bit-reproducible.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from pairrl.errors import ContractError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording parents (nothing inside is differentiable)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward", "stop_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            src = np.asarray(data)
            dtype = src.dtype if np.issubdtype(src.dtype, np.floating) else DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.stop_grad = False
        self.name = name

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def set_data(self, value: np.ndarray) -> None:
        """Replace the leaf value (optimizer updates). Not allowed on op outputs."""
        if self.parents:
            raise ContractError("set_data is only valid on leaf tensors")
        value = np.array(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise DimensionError(f"set_data shape {value.shape} != {self.data.shape}")
        value.flags.writeable = False
        self.data = value

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ContractError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _node(value: np.ndarray, op: str, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    value = np.asarray(value)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op}: non-finite output")
    out = Tensor.__new__(Tensor)
    if value.flags.writeable:
        value.flags.writeable = False
    out.data = value
    out.grad = None
    out.op = op
    out.stop_grad = False
    out.name = None
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out.parents = parents if track else ()
    out._backward = backward if track else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# -- elementwise binary -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    return _node(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "subtract")
    return _node(a.data - b.data, "subtract", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "multiply")
    return _node(a.data * b.data, "multiply", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def minimum(a, b) -> Tensor:
    """Elementwise min; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "minimum")
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), "minimum", (a, b),
                 lambda g: (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                            _unbroadcast(np.where(pick_a, 0, g), b.shape)))


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to ``a``."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "maximum")
    pick_a = a.data >= b.data
    return _node(np.where(pick_a, a.data, b.data), "maximum", (a, b),
                 lambda g: (_unbroadcast(np.where(pick_a, g, 0), a.shape),
                            _unbroadcast(np.where(pick_a, 0, g), b.shape)))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, "matmul", (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


# -- elementwise unary --------------------------------------------------------

def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _node(a.data * s, "scalar-multiply", (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, "tanh", (a,), lambda g: (g * (1 - y * y),))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    on = a.data > 0
    return _node(np.where(on, a.data, 0).astype(a.dtype), "relu", (a,), lambda g: (g * on,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _node(y, "exp", (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _node(y, "log", (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, "square", (a,), lambda g: (2 * g * a.data,))


def clip_min(a: Tensor, c: float) -> Tensor:
    """``min(c, a)``. Gradient 1 where ``a <= c`` (ties pass through), 0 where clipped."""
    c = a.dtype.type(c)
    keep = a.data <= c
    return _node(np.where(keep, a.data, c), "clip-min", (a,), lambda g: (g * keep,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes on the closed interval, 0 outside."""
    lo, hi = a.dtype.type(lo), a.dtype.type(hi)
    keep = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * keep,))


def astype(a: Tensor, dtype) -> Tensor:
    src = a.dtype
    return _node(a.data.astype(dtype), "cast", (a,), lambda g: (g.astype(src),))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {shape}") from exc
    return _node(y, "reshape", (a,), lambda g: (g.reshape(src),))


def stop_grad(a: Tensor) -> Tensor:
    """Cut the graph: the result is a constant with ``a``'s value."""
    out = _node(a.data.copy(), "stop-grad", (), None)
    out.stop_grad = True
    return out


# -- reductions and structure -------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    src = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).astype(a.dtype),)

    return _node(y, "sum", (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    y = np.mean(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    src = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src).astype(a.dtype),)

    return _node(y, "mean", (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _node(s, "softmax", (a,),
                 lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    s = np.exp(y)
    return _node(y, "log-softmax", (a,),
                 lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concatenate: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(y, "concatenate", tuple(tensors),
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing (``slice`` op); repeated indices accumulate."""
    try:
        y = a.data[index]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from exc

    def back(g):
        out = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _node(np.array(y), "slice", (a,), back)


# -- backward ------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Populate ``.grad`` on every reachable leaf and return a gradient map.

    With ``params`` given the map has exactly those keys; parameters that are
    unreachable (for instance only used behind :func:`stop_grad`) receive an
    all-zero gradient.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    if params is not None:
        for p in params:
            p.grad = np.zeros(p.shape, dtype=p.dtype)
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad:
        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        for node in reversed(_topo(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = np.array(g, dtype=node.dtype)
                leaves[id(node)] = node
                continue
            for p, pg in zip(node.parents, node._backward(g)):
                if not p.requires_grad or pg is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    if params is None:
        return {t: t.grad for t in leaves.values()}
    return {p: p.grad for p in params}


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
