"""Tiny reverse-mode autodiff over numpy arrays.

Covers only what the losses here need: matmul, tanh, exp, log,
softmax/log-softmax, logsumexp, elementwise arithmetic, min/max/clip,
gather along the last axis, sums and means. Everything is float64.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, parents=(), backward=None, requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self._backward = backward
        self.requires_grad = (
            any(p.requires_grad for p in parents) if requires_grad is None else requires_grad
        )
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor({self.value!r})"

    # graph plumbing

    def _make(self, value, parents, backward):
        parents = tuple(parents)
        if not any(p.requires_grad for p in parents):
            return Tensor(value, requires_grad=False)
        return Tensor(value, parents, backward)

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen = [], set()
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
            stack.extend((p, False) for p in node.parents)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                for parent, g in zip(node.parents, node._backward(node.grad)):
                    if g is None or not parent.requires_grad:
                        continue
                    g = _unbroadcast(g, parent.shape)
                    parent.grad = g if parent.grad is None else parent.grad + g

    # elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        return self._make(self.value + other.value, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        return self._make(self.value - other.value, (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return self._make(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value
        return self._make(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.value, other.value

        def back(g):
            if b.ndim == 1:
                return np.multiply.outer(g, b), np.tensordot(a, g, axes=(range(a.ndim - 1), range(g.ndim)))
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            if b.ndim == 2 and gb.ndim > 2:
                gb = gb.reshape(-1, *b.shape).sum(axis=0)
            return ga, gb

        return self._make(a @ b, (self, other), back)

    def square(self):
        a = self.value
        return self._make(a * a, (self,), lambda g: (2.0 * a * g,))

    def exp(self):
        out = np.exp(self.value)
        return self._make(out, (self,), lambda g: (g * out,))

    def log(self):
        a = self.value
        return self._make(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self):
        out = np.tanh(self.value)
        return self._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def clip(self, lo, hi):
        a = self.value
        inside = (a >= lo) & (a <= hi)
        return self._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,))

    # reductions and shape

    def sum(self, axis=None, keepdims=False):
        shape = self.value.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._make(self.value.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        old = self.value.shape
        return self._make(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def take_last(self, index):
        """Gather ``x[..., index[...]]`` along the last axis."""
        index = np.asarray(index)
        picked = np.take_along_axis(self.value, index[..., None], axis=-1)[..., 0]
        shape = self.value.shape

        def back(g):
            out = np.zeros(shape)
            np.put_along_axis(out, index[..., None], g[..., None], axis=-1)
            return (out,)

        return self._make(picked, (self,), back)

    def detach(self):
        return Tensor(self.value, requires_grad=False)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value <= b.value
    return a._make(
        np.where(pick_a, a.value, b.value), (a, b), lambda g: (g * pick_a, g * ~pick_a)
    )


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value >= b.value
    return a._make(
        np.where(pick_a, a.value, b.value), (a, b), lambda g: (g * pick_a, g * ~pick_a)
    )


def logsumexp(x: Tensor, axis=-1, keepdims=False) -> Tensor:
    x = as_tensor(x)
    m = x.value.max(axis=axis, keepdims=True)
    e = np.exp(x.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return x._make(out if keepdims else np.squeeze(out, axis=axis), (x,), back)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    x = as_tensor(x)
    m = x.value.max(axis=axis, keepdims=True)
    shifted = x.value - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return x._make(out, (x,), back)


def softmax(x: Tensor, axis=-1) -> Tensor:
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return x._make(out, (x,), back)
