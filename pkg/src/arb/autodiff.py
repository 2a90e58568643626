"""Minimal tape-based reverse-mode automatic differentiation over numpy arrays.

Supports exactly the ops the training losses need: affine layers, ReLU/Tanh,
exp, clip, elementwise arithmetic with broadcasting, and sum/mean reductions.
Everything is float64.  Graphs are rebuilt per loss evaluation and discarded
after :func:`backward`, so no retain/free bookkeeping is needed.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus the closures needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()  # tuple of (parent Tensor, grad_fn)

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- op construction -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, parents) -> "Tensor":
        out = Tensor(data)
        tracked = tuple((p, fn) for p, fn in parents if p.requires_grad or p._parents)
        if tracked:
            out._parents = tracked
            out.requires_grad = True
        return out

    def __add__(self, other):
        other = self._lift(other)
        return self._make(
            self.data + other.data,
            [
                (self, lambda g: _unbroadcast(g, self.shape)),
                (other, lambda g: _unbroadcast(g, other.shape)),
            ],
        )

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, [(self, lambda g: -g)])

    def __sub__(self, other):
        other = self._lift(other)
        return self._make(
            self.data - other.data,
            [
                (self, lambda g: _unbroadcast(g, self.shape)),
                (other, lambda g: _unbroadcast(-g, other.shape)),
            ],
        )

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        other = self._lift(other)
        return self._make(
            self.data * other.data,
            [
                (self, lambda g: _unbroadcast(g * other.data, self.shape)),
                (other, lambda g: _unbroadcast(g * self.data, other.shape)),
            ],
        )

    __rmul__ = __mul__

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._lift(other)
        return self._make(
            self.data @ other.data,
            [
                (self, lambda g: g @ other.data.T),
                (other, lambda g: self.data.T @ g),
            ],
        )

    __matmul__ = matmul

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return self._make(np.where(mask, self.data, 0.0), [(self, lambda g: g * mask)])

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        return self._make(y, [(self, lambda g: g * (1.0 - y * y))])

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        return self._make(y, [(self, lambda g: g * y)])

    def square(self) -> "Tensor":
        return self._make(self.data * self.data, [(self, lambda g: g * (2.0 * self.data))])

    def clip(self, lo=None, hi=None) -> "Tensor":
        # gradient passes through strictly inside the window, zero outside
        mask = np.ones_like(self.data, dtype=bool)
        if lo is not None:
            mask &= self.data >= lo
        if hi is not None:
            mask &= self.data <= hi
        return self._make(np.clip(self.data, lo, hi), [(self, lambda g: g * mask)])

    def sum(self, axis=None) -> "Tensor":
        def grad_fn(g):
            if axis is None:
                return np.broadcast_to(g, self.shape).copy()
            return np.broadcast_to(np.expand_dims(g, axis), self.shape).copy()

        return self._make(self.data.sum(axis=axis), [(self, grad_fn)])

    def mean(self, axis=None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Fills ``.grad`` on every tensor that participates in the graph;
    pre-existing grads on leaves accumulate (zero them between steps).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, grad_fn in node._parents:
            contrib = grad_fn(g)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + contrib
            else:
                grads[id(parent)] = contrib
