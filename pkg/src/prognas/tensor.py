"""Reverse-mode autodiff tensor on top of numpy.

Every differentiable primitive builds one graph node: an output Tensor that
remembers its parent tensors and a closure accumulating gradients into them.
``Tensor.backward()`` runs a single reverse sweep from a scalar loss.

Precision is a process-wide setting: float32 for training runs, float64 for
gradient checking (see `set_default_dtype` / `precision`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32


def set_default_dtype(name: str) -> None:
    """Set the process-wide scalar precision ("f32" or "f64")."""
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def default_dtype() -> np.dtype:
    return np.dtype(_default_dtype)


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default precision (used by gradient checks)."""
    global _default_dtype
    saved = _default_dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        _default_dtype = saved


class Tensor:
    """A dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"],
              backward: Callable[[np.ndarray], None] | None) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate `.grad` of every requires_grad tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        # Iterative topological order; graphs can be deep (many stacked cells).
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self):
        return tsum(self)

    def mean(self, axes: tuple[int, ...] | None = None):
        return tmean(self, axes)

    def relu(self):
        return relu(self)

    def reshape(self, *shape: int):
        return reshape(self, shape)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- primitives ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._make(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._make(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a._accumulate(-g)

    return Tensor._make(-a.data, (a,), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain (non-differentiated) constant."""
    c = a.data.dtype.type(c)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * c)

    return Tensor._make(a.data * c, (a,), backward)


def mask(a: Tensor, m: np.ndarray) -> Tensor:
    """Elementwise multiply by a constant mask (dropout, drop-path)."""
    m = np.asarray(m, dtype=a.data.dtype)
    data = a.data * m

    def backward(g: np.ndarray) -> None:
        a._accumulate(_unbroadcast(g * m, a.shape))

    return Tensor._make(data, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor._make(data, (a,), backward)


def tmean(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        data = np.asarray(a.data.mean(), dtype=a.data.dtype)
        count = a.data.size
    else:
        data = a.data.mean(axis=axes)
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def backward(g: np.ndarray) -> None:
        if axes is None:
            a._accumulate(np.broadcast_to(g / count, a.shape))
        else:
            ge = np.expand_dims(g, axes) / count
            a._accumulate(np.broadcast_to(ge, a.shape))

    return Tensor._make(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    data = np.where(keep, a.data, a.data.dtype.type(0))

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * keep)

    return Tensor._make(data, (a,), backward)


def reshape(a: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g.reshape(a.shape))

    return Tensor._make(data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ValueError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._make(data, tuple(tensors), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (stable)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        # J^T g = w * (g - <g, w>)
        dot = (g * w).sum(axis=-1, keepdims=True)
        a._accumulate(w * (g - dot))

    return Tensor._make(w, (a,), backward)


def weighted_sum(branches: Sequence[Tensor], weights: Tensor) -> Tensor:
    """sum_k weights[k] * branches[k], differentiable in both arguments.

    `weights` is a 1-D tensor aligned with `branches`; all branches share one
    shape. Single graph node, so mixing O candidate operations stays cheap.
    """
    if len(branches) != weights.shape[0]:
        raise ValueError(
            f"{len(branches)} branches but {weights.shape[0]} weights")
    w = weights.data
    data = w[0] * branches[0].data
    for k in range(1, len(branches)):
        data = data + w[k] * branches[k].data

    def backward(g: np.ndarray) -> None:
        if weights.requires_grad:
            gw = np.array([np.vdot(g, b.data) for b in branches], dtype=w.dtype)
            weights._accumulate(gw)
        for k, b in enumerate(branches):
            if b.requires_grad:
                b._accumulate(g * w[k])

    return Tensor._make(data, tuple(branches) + (weights,), backward)
