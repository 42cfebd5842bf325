"""Minimal array-valued reverse-mode differentiation on float64 buffers.

Tensors wrap numpy arrays and record their parents plus a backward closure;
``Tensor.backward`` walks the graph once in reverse topological order.
Only the operations needed by the model layers are implemented.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(
        self,
        values: Array,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[Array], None] | None = None,
    ):
        self.values = values
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._parents = parents
        self._backward_fn = backward_fn
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def backward(self) -> None:
        """Populate gradients of every reachable tensor with requires_grad."""
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError("backward already ran on this graph; reset gradients first")
        self._backward_done = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a leaf tensor from array-like data, validating finiteness."""
    values = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("tensor values must all be finite")
    return Tensor(values, requires_grad=requires_grad)


class Parameter:
    """A named trainable tensor with gradient storage."""

    def __init__(self, name: str, values: Array):
        self.name = name
        self.tensor = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)

    @property
    def values(self) -> Array:
        return self.tensor.values

    @values.setter
    def values(self, new: Array) -> None:
        if new.shape != self.tensor.values.shape:
            raise ValueError(f"parameter {self.name}: shape {new.shape} != {self.tensor.values.shape}")
        self.tensor.values = np.asarray(new, dtype=np.float64)

    @property
    def gradient(self) -> Array:
        if self.tensor.grad is None:
            return np.zeros_like(self.tensor.values)
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def backward(loss: Tensor, parameters: Iterable[Parameter] = ()) -> None:
    """Run backward from ``loss``; off-graph parameters get zero gradients."""
    loss.backward()
    for param in parameters:
        if param.tensor.grad is None:
            param.tensor.grad = np.zeros_like(param.tensor.values)


def _accumulate(node: Tensor, grad: Array) -> None:
    # Accumulation always rebinds (never mutates in place), so shared grad
    # arrays between siblings are safe.
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = grad
    else:
        node.grad = node.grad + grad


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b)
    out_req = a.requires_grad or b.requires_grad
    out = Tensor(a.values + b.values, requires_grad=out_req, parents=(a, b))

    def backward_fn(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.values.shape))
        _accumulate(b, _unbroadcast(g, b.values.shape))

    out._backward_fn = backward_fn if out_req else None
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b)
    out_req = a.requires_grad or b.requires_grad
    out = Tensor(a.values - b.values, requires_grad=out_req, parents=(a, b))

    def backward_fn(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.values.shape))
        _accumulate(b, _unbroadcast(-g, b.values.shape))

    out._backward_fn = backward_fn if out_req else None
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b)
    out_req = a.requires_grad or b.requires_grad
    out = Tensor(a.values * b.values, requires_grad=out_req, parents=(a, b))

    def backward_fn(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.values, a.values.shape))
        _accumulate(b, _unbroadcast(g * a.values, b.values.shape))

    out._backward_fn = backward_fn if out_req else None
    return out


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.values * factor, requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:
        out._backward_fn = lambda g: _accumulate(a, g * factor)
    return out


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.values.shape} @ {b.values.shape}")
    if a.values.shape[1] != b.values.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.values.shape} @ {b.values.shape}")
    out_req = a.requires_grad or b.requires_grad
    out = Tensor(a.values @ b.values, requires_grad=out_req, parents=(a, b))

    def backward_fn(g: Array) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.values.T)
        if b.requires_grad:
            _accumulate(b, a.values.T @ g)

    out._backward_fn = backward_fn if out_req else None
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.values.T, requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:
        out._backward_fn = lambda g: _accumulate(a, g.T)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    out = Tensor(y, requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:
        out._backward_fn = lambda g: _accumulate(a, g * (1.0 - y * y))
    return out


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.values)
    out = Tensor(y, requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:
        out._backward_fn = lambda g: _accumulate(a, g * y * (1.0 - y))
    return out


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.values, 0.0)
    out = Tensor(y, requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:
        out._backward_fn = lambda g: _accumulate(a, g * (a.values > 0))
    return out


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims), requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:

        def backward_fn(g: Array) -> None:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.values.shape))

        out._backward_fn = backward_fn
    return out


def mean_(a: Tensor) -> Tensor:
    return scale(sum_(a), 1.0 / a.values.size)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out_req = any(t.requires_grad for t in tensors)
    out = Tensor(
        np.concatenate([t.values for t in tensors], axis=axis),
        requires_grad=out_req,
        parents=tuple(tensors),
    )
    if out_req:
        sizes = [t.values.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward_fn(g: Array) -> None:
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                _accumulate(t, g[tuple(idx)])

        out._backward_fn = backward_fn
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.values.ndim
    idx[axis] = slice(start, start + length)
    idx_t = tuple(idx)
    out = Tensor(a.values[idx_t], requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:

        def backward_fn(g: Array) -> None:
            full = np.zeros_like(a.values)
            full[idx_t] = g
            _accumulate(a, full)

        out._backward_fn = backward_fn
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.values.reshape(shape), requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:
        out._backward_fn = lambda g: _accumulate(a, g.reshape(a.values.shape))
    return out


def gather_rows(a: Tensor, indices: Array) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    indices = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.values[indices], requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:

        def backward_fn(g: Array) -> None:
            full = np.zeros_like(a.values)
            np.add.at(full, indices, g)
            _accumulate(a, full)

        out._backward_fn = backward_fn
    return out


def softmax(a: Tensor, axis: int = -1, mask: Array | None = None) -> Tensor:
    """Numerically stable softmax; masked-out positions get zero weight.

    ``mask`` is a float array of ones and zeros broadcastable to the input;
    at least one position per row must be valid.
    """
    x = a.values
    if mask is not None:
        shifted = np.where(mask > 0, x, -np.inf)
        maxes = shifted.max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask > 0, x - maxes, -np.inf))
        e = np.where(mask > 0, e, 0.0)
    else:
        maxes = x.max(axis=axis, keepdims=True)
        e = np.exp(x - maxes)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=a.requires_grad, parents=(a,))
    if a.requires_grad:

        def backward_fn(g: Array) -> None:
            dot = (g * y).sum(axis=axis, keepdims=True)
            _accumulate(a, y * (g - dot))

        out._backward_fn = backward_fn
    return out


def bce_with_logits(logits: Tensor, targets: Array, weights: Array | None = None) -> Tensor:
    """Mean of per-example weighted binary cross-entropy from logits.

    Stable formulation: max(z, 0) - z*y + log(1 + exp(-|z|)).
    """
    z = logits.values
    y = np.asarray(targets, dtype=np.float64)
    w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=np.float64)
    per_example = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    value = np.array((w * per_example).mean())
    out = Tensor(value, requires_grad=logits.requires_grad, parents=(logits,))
    if logits.requires_grad:

        def backward_fn(g: Array) -> None:
            _accumulate(logits, g * w * (_sigmoid(z) - y) / z.size)

        out._backward_fn = backward_fn
    return out


# Operator sugar used in a few compact spots.
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__mul__ = lambda self, other: scale(self, other) if isinstance(other, (int, float)) else mul(self, other)
Tensor.__rmul__ = Tensor.__mul__
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
