"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
topologically sorts the graph and accumulates gradients into .grad.
Only what the pose models need is implemented: elementwise arithmetic
with broadcasting, matmul, reductions, exp/log/tanh/sigmoid, clip,
reshape/transpose/slicing/gather, and concatenation.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad
        self.grad = None

    # -------------------------------------------------- graph plumbing

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward only from scalar outputs")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node.parents:
                visit(p)
            order.append(node)

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node)

    # -------------------------------------------------- arithmetic

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other):
        other = Tensor._lift(other)

        def back(out):
            self._accumulate(_unbroadcast(out.grad, self.shape))
            other._accumulate(_unbroadcast(out.grad, other.shape))

        return Tensor(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        def back(out):
            self._accumulate(-out.grad)

        return Tensor(-self.data, (self,), back)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)

        def back(out):
            self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            other._accumulate(_unbroadcast(out.grad * self.data, other.shape))

        return Tensor(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * Tensor._lift(other) ** -1.0

    def __rtruediv__(self, other):
        return Tensor._lift(other) * self ** -1.0

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents supported")

        def back(out):
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1.0))

        return Tensor(self.data ** exponent, (self,), back)

    def __matmul__(self, other):
        other = Tensor._lift(other)

        def back(out):
            g = out.grad
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            self._accumulate(_unbroadcast(ga, self.shape))
            other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor(self.data @ other.data, (self, other), back)

    # -------------------------------------------------- reductions

    def sum(self, axis=None, keepdims=False):
        def back(out):
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -------------------------------------------------- elementwise

    def exp(self):
        value = np.exp(self.data)

        def back(out):
            self._accumulate(out.grad * value)

        return Tensor(value, (self,), back)

    def log(self):
        def back(out):
            self._accumulate(out.grad / self.data)

        return Tensor(np.log(self.data), (self,), back)

    def tanh(self):
        value = np.tanh(self.data)

        def back(out):
            self._accumulate(out.grad * (1.0 - value * value))

        return Tensor(value, (self,), back)

    def sigmoid(self):
        value = 0.5 * (1.0 + np.tanh(0.5 * self.data))

        def back(out):
            self._accumulate(out.grad * value * (1.0 - value))

        return Tensor(value, (self,), back)

    def relu(self):
        keep = self.data > 0

        def back(out):
            self._accumulate(out.grad * keep)

        return Tensor(self.data * keep, (self,), back)

    def clip(self, lo: float, hi: float):
        inside = (self.data > lo) & (self.data < hi)

        def back(out):
            self._accumulate(out.grad * inside)

        return Tensor(np.clip(self.data, lo, hi), (self,), back)

    # -------------------------------------------------- shape ops

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def back(out):
            self._accumulate(out.grad.reshape(old))

        return Tensor(self.data.reshape(shape), (self,), back)

    def transpose(self, axes):
        inverse = np.argsort(axes)

        def back(out):
            self._accumulate(out.grad.transpose(inverse))

        return Tensor(self.data.transpose(axes), (self,), back)

    def __getitem__(self, key):
        def back(out):
            g = np.zeros_like(self.data)
            np.add.at(g, key, out.grad)
            self._accumulate(g)

        return Tensor(self.data[key], (self,), back)

    @staticmethod
    def concat(tensors, axis=0):
        tensors = [Tensor._lift(t) for t in tensors]
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def back(out):
            pieces = np.split(out.grad, splits, axis=axis)
            for t, g in zip(tensors, pieces):
                t._accumulate(g)

        return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                      tuple(tensors), back)


def parameter(data, rng=None, scale=None) -> Tensor:
    """Trainable leaf. With rng, fills uniform(-scale, scale)."""
    if rng is not None:
        shape = data if isinstance(data, tuple) else tuple(data)
        if scale is None:
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            scale = 1.0 / np.sqrt(max(fan_in, 1))
        data = rng.uniform(-scale, scale, size=shape)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class SGD:
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v
