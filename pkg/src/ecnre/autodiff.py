"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for this model family: broadcast add/mul, 2-D matmul,
a few pointwise nonlinearities, concatenation, reshape and full reductions.
Tensors are float64 throughout. Constants (``requires_grad=False``) are
dropped from the graph, so forward-only evaluation builds no backward state.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        self.grad = grad if self.grad is None else self.grad + grad

    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise ValueError("backward() on a tensor outside the graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(_topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __truediv__(self, scalar):
        return mul(self, Tensor(1.0 / float(scalar)))

    # -- unary shortcuts -----------------------------------------------

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def log(self):
        return log(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self):
        return total(self)

    def mean(self):
        return total(self) / self.data.size


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _from_op(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    tracked = tuple(t for t in inputs if t.requires_grad)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Operations


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out = _from_op(out_data, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out = _from_op(out_data, (a, b), backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out = _from_op(out_data, (a, b), backward)
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * mask)

    out = _from_op(np.where(mask, a.data, 0.0), (a,), backward)
    return out


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - value * value))

    out = _from_op(value, (a,), backward)
    return out


def sigmoid(a: Tensor) -> Tensor:
    value = _stable_sigmoid(a.data)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * value * (1.0 - value))

    out = _from_op(value, (a,), backward)
    return out


def log(a: Tensor) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    out = _from_op(np.log(a.data), (a,), backward)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * inside)

    out = _from_op(np.clip(a.data, lo, hi), (a,), backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    out = _from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.data.shape))

    out = _from_op(a.data.reshape(shape), (a,), backward)
    return out


def total(a: Tensor) -> Tensor:
    """Full sum to a scalar tensor."""

    def backward():
        if a.requires_grad:
            a._accumulate(np.broadcast_to(out.grad, a.data.shape).copy())

    out = _from_op(np.asarray(a.data.sum()), (a,), backward)
    return out
