"""Dense-tensor reverse-mode autodiff on a dynamic tape.

Tensors wrap flat numpy arrays; every differentiable op records a backward
closure on the tape. The graph is rebuilt on every forward pass and consumed
by ``backward``. Training code runs at float32, gradient checks at float64 —
ops preserve the dtype of their operands.

Broadcasting is deliberately narrow: two operands must have equal shapes,
or one must be a scalar, or the smaller shape must be a trailing suffix of
the larger (broadcast over leading axes). Anything else needs an explicit
``reshape``/``broadcast_to``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Dict, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (pure forward evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense n-d array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values outside the graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # arithmetic sugar; constants stay off the tape
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


# Gradient of a backward pass: parameter tensor -> ndarray of matching shape.
GradientMap = Dict[Tensor, np.ndarray]


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...],
          backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad = t.grad + g


def _is_scalar_shape(shape: tuple[int, ...]) -> bool:
    return len(shape) == 0 or int(np.prod(shape)) == 1


def _check_broadcast(sa: tuple[int, ...], sb: tuple[int, ...], op: str) -> None:
    if sa == sb or _is_scalar_shape(sa) or _is_scalar_shape(sb):
        return
    short, long_ = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) < len(long_) and long_[len(long_) - len(short):] == short:
        return
    raise ValueError(f"{op}: incompatible shapes {sa} vs {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` (leading axes / scalar)."""
    if g.shape == shape:
        return g
    if _is_scalar_shape(shape):
        return np.asarray(g.sum()).reshape(shape)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _binary(a: Tensor, b: Tensor, op: str,
            fwd: Callable[[np.ndarray, np.ndarray], np.ndarray],
            da: Callable[[np.ndarray], np.ndarray],
            db: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    _check_broadcast(a.shape, b.shape, op)
    data = fwd(a.data, b.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(da(g), a.shape))
        _accumulate(b, _unbroadcast(db(g), b.shape))

    return _node(data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "add", np.add, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "sub", np.subtract, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "mul", np.multiply,
                   lambda g: g * b.data, lambda g: g * a.data)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, "div", np.divide,
                   lambda g: g / b.data,
                   lambda g: -g * a.data / (b.data * b.data))


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)
    return _node(-a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expected 2-d operands, got {a.shape} vs {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError(f"transpose: expected 2-d operand, got {a.shape}")

    def backward(g):
        _accumulate(a, g.T)

    return _node(a.data.T, (a,), backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _node(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def backward(g):
        _accumulate(a, g * (0.5 / data))

    return _node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _node(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return _node(data, (a,), backward)


def elu(a: Tensor) -> Tensor:
    x = a.data
    neg_part = np.expm1(np.minimum(x, 0.0))
    data = np.where(x > 0.0, x, neg_part)

    def backward(g):
        _accumulate(a, g * np.where(x > 0.0, 1.0, neg_part + 1.0))

    return _node(data, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        _accumulate(a, g / (1.0 + np.exp(-x)))

    return _node(data, (a,), backward)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    data = np.maximum(a.data, floor)
    mask = a.data > floor

    def backward(g):
        _accumulate(a, g * mask)

    return _node(data, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _node(data, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis (stable)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def backward(g):
        _accumulate(a, g - probs * g.sum(axis=-1, keepdims=True))

    return _node(data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(np.asarray(g).reshape(
                (1,) * a.ndim if not keepdims else g.shape), a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape))

    return _node(data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: empty tensor list")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _node(data, tuple(tensors), backward)


def tslice(a: Tensor, key) -> Tensor:
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accumulate(a, full)

    return _node(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _node(data, (a,), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    _check_broadcast(a.shape, shape, "broadcast_to")
    data = np.broadcast_to(a.data, shape)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))

    return _node(np.array(data), (a,), backward)


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward; contributes exactly zero gradient backward."""
    return Tensor(a.data)


def squared_error(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (a - b)^2."""
    d = sub(a, b)
    return mul(d, d)


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
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> GradientMap:
    """Run reverse-mode accumulation from a scalar loss.

    Returns gradients for `params` (zeros where unreachable), or for every
    reachable leaf with requires_grad when `params` is None. The traversed
    graph is consumed: interior nodes drop their tape entries.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("backward: loss is not finite")

    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    leaves: list[Tensor] = []
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        elif node._backward is None and node.requires_grad:
            leaves.append(node)

    grads: GradientMap = {}
    if params is None:
        for leaf in leaves:
            if leaf.grad is not None:
                grads[leaf] = leaf.grad
    else:
        for p in params:
            grads[p] = p.grad if p.grad is not None else np.zeros_like(p.data)

    # consume the tape; parameter leaves keep their .grad
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None
    return grads
