"""A small reverse-mode differentiation engine over numpy arrays.

Each :class:`Tensor` records the tensors it was computed from and a closure
that pushes its gradient back to them. ``loss.backward()`` walks the graph in
reverse topological order. Only what SAC needs is implemented.
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: Tuple["Tensor", ...] = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    def _accum(self, g: np.ndarray) -> None:
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = _lift(other)

        def back(g):
            self._accum(_unbroadcast(g, self.data.shape))
            other._accum(_unbroadcast(g, other.data.shape))
        return _make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return _make(-self.data, (self,), lambda g: self._accum(-g))

    def __sub__(self, other) -> "Tensor":
        return self + (-_lift(other))

    def __rsub__(self, other) -> "Tensor":
        return _lift(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = _lift(other)

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.data.shape))
            other._accum(_unbroadcast(g * self.data, other.data.shape))
        return _make(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, c: float) -> "Tensor":
        return self * (1.0 / c)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)
        return _make(self.data @ other.data, (self, other), back)

    def __getitem__(self, idx) -> "Tensor":
        def back(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            self._accum(full)
        return _make(self.data[idx], (self,), back)

    # -- elementwise ----------------------------------------------------------
    def relu(self) -> "Tensor":
        mask = self.data > 0
        return _make(self.data * mask, (self,), lambda g: self._accum(g * mask))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return _make(out, (self,), lambda g: self._accum(g * (1.0 - out * out)))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return _make(out, (self,), lambda g: self._accum(g * out))

    def log(self) -> "Tensor":
        x = self.data
        return _make(np.log(x), (self,), lambda g: self._accum(g / x))

    def softplus(self) -> "Tensor":
        x = self.data
        out = np.logaddexp(0.0, x)
        sig = 0.5 * (1.0 + np.tanh(0.5 * x))
        return _make(out, (self,), lambda g: self._accum(g * sig))

    def square(self) -> "Tensor":
        x = self.data
        return _make(x * x, (self,), lambda g: self._accum(2.0 * g * x))

    def clip(self, lo: float, hi: float) -> "Tensor":
        x = self.data
        mask = (x >= lo) & (x <= hi)
        return _make(np.clip(x, lo, hi), (self,), lambda g: self._accum(g * mask))

    # -- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, shape).copy())
        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis, keepdims) * (1.0 / n)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], back: Callable) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, tuple(parents) if req else (), back if req else None)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    take_a = a.data <= b.data

    def back(g):
        a._accum(_unbroadcast(g * take_a, a.data.shape))
        b._accum(_unbroadcast(g * ~take_a, b.data.shape))
    return _make(np.where(take_a, a.data, b.data), (a, b), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(part)
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def parameters_grad_flat(params: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([(p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
                           for p in params])
