"""Array-backed tensor with reverse-mode gradients.

Each op records its parents and a closure mapping the output gradient to
one gradient per parent. ``Tensor.backward`` walks the graph in reverse
topological order and accumulates into ``.grad``. Only the operations the
encoder and time-series modules need are provided.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Intermediate gradients are released once propagated.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)
        owned: set[int] = set()  # grads safe to update in place
        for node in order:
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if isinstance(g, _IndexGrad):
                    if parent.grad is None:
                        parent.grad = np.zeros(parent.shape, dtype=g.value.dtype)
                        owned.add(id(parent))
                    elif id(parent) not in owned:
                        parent.grad = parent.grad.copy()
                        owned.add(id(parent))
                    parent.grad[g.index] += g.value
                elif parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
                    owned.add(id(parent))
            node.grad = None
            node._backward = None
            node._parents = ()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


class _IndexGrad:
    """Gradient that only touches ``parent[index]``; avoids dense zero fills."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; recurrent unrolls are deeper than the recursion limit
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
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def fully_connected(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W + b`` for ``x`` of shape (n, d_in)."""
    if x.ndim != 2:
        raise ValueError(f"fully_connected: input must be 2-D (n, d_in), got shape {x.shape}")
    if W.ndim != 2 or W.shape[0] != x.shape[1]:
        raise ValueError(
            f"fully_connected: weight shape {W.shape} does not match input width {x.shape[1]}"
        )
    if b is not None and b.shape != (W.shape[1],):
        raise ValueError(f"fully_connected: bias shape {b.shape}, expected ({W.shape[1]},)")
    y = x.data @ W.data
    if b is not None:
        y = y + b.data

    def backward(g):
        gx = g @ W.data.T if x.requires_grad else None
        gW = x.data.T @ g if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _result(y, parents, backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(x.data.sum()), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _result(np.asarray(x.data.mean()), (x,), backward)


# ------------------------------------------------------------------- shaping

def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (non-fancy) indexing."""

    def backward(g):
        return (_IndexGrad(idx, g),)

    return _result(x.data[idx], (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in xs], axis=axis), xs, backward)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in xs], axis=axis), xs, backward)


# --------------------------------------------------------------- activations

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp(-|z|) never overflows; negative inputs take e / (1 + e)
    e = np.exp(-np.abs(z))
    r = 1.0 / (1.0 + e)
    return r * np.maximum(e, (z >= 0).astype(z.dtype))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward)


def lrelu(x: Tensor, slope: float = 0.01) -> Tensor:
    """Leaky ReLU; negative inputs are scaled by ``slope``."""
    slope = x.dtype.type(slope)
    pos = (x.data > 0).astype(x.dtype)
    if 0 <= slope <= 1:
        # max-based forms avoid the much slower np.where
        y = np.maximum(x.data, x.data * slope)
        scale = np.maximum(pos, slope)
    else:
        scale = pos + (1 - pos) * slope
        y = x.data * scale

    def backward(g):
        return (g * scale,)

    return _result(y, (x,), backward)


def gated(a: Tensor, b: Tensor) -> Tensor:
    """WaveNet gate ``tanh(a) * sigmoid(b)``."""
    ta = np.tanh(a.data)
    sb = _sigmoid(b.data)

    def backward(g):
        return g * sb * (1.0 - ta * ta), g * ta * sb * (1.0 - sb)

    return _result(ta * sb, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), backward)


def softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
