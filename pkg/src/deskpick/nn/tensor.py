"""Reverse-mode autodiff on dense numpy arrays.

Each forward op records its parents and a backward closure on the output
node; `backward()` replays the tape in reverse topological order. Graphs
are built per forward call and garbage-collected with their loss node.
Gradients accumulate on leaves until `zero_grad` is called, so parameters
can be reused across many forward passes.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float64


class AutodiffError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    # -- graph-building ops ------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        _check_same_shape("add", self, other)
        out = _node(self.data + other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g)
            if other.requires_grad:
                other._accumulate(g)

        out._backward = bwd
        return out

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        _check_same_shape("sub", self, other)
        out = _node(self.data - other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g)
            if other.requires_grad:
                other._accumulate(-g)

        out._backward = bwd
        return out

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(other)
        other = _as_tensor(other, self.dtype)
        _check_same_shape("mul", self, other)
        out = _node(self.data * other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * other.data)
            if other.requires_grad:
                other._accumulate(g * self.data)

        out._backward = bwd
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def scale(self, c):
        c = float(c)
        out = _node(self.data * c, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * c)

        out._backward = bwd
        return out

    def add_const(self, c):
        out = _node(self.data + c, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g)

        out._backward = bwd
        return out

    def matmul(self, other):
        other = _as_tensor(other, self.dtype)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(f"matmul needs 2-D operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {self.shape} @ {other.shape}")
        out = _node(self.data @ other.data, (self, other))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        out._backward = bwd
        return out

    def add_row(self, row):
        """Matrix + row vector, broadcast over axis 0 (explicit, checked)."""
        row = _as_tensor(row, self.dtype)
        if self.data.ndim != 2 or row.data.ndim != 1 or self.shape[1] != row.shape[0]:
            raise ShapeError(f"add_row: {self.shape} + row {row.shape}")
        out = _node(self.data + row.data[None, :], (self, row))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g)
            if row.requires_grad:
                row._accumulate(g.sum(axis=0))

        out._backward = bwd
        return out

    def mul_row(self, row):
        """Matrix * row vector, broadcast over axis 0 (explicit, checked)."""
        row = _as_tensor(row, self.dtype)
        if self.data.ndim != 2 or row.data.ndim != 1 or self.shape[1] != row.shape[0]:
            raise ShapeError(f"mul_row: {self.shape} * row {row.shape}")
        out = _node(self.data * row.data[None, :], (self, row))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * row.data[None, :])
            if row.requires_grad:
                row._accumulate((g * self.data).sum(axis=0))

        out._backward = bwd
        return out

    def add_scalar_tensor(self, s, coeff=1.0):
        """Elementwise add coeff * scalar-tensor (broadcast to this shape)."""
        if s.data.size != 1:
            raise ShapeError(f"add_scalar_tensor needs a scalar, got {s.shape}")
        out = _node(self.data + coeff * s.data, (self, s))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g)
            if s.requires_grad:
                s._accumulate(np.asarray(coeff * g.sum()).reshape(s.data.shape))

        out._backward = bwd
        return out

    def relu(self):
        mask = self.data > 0
        out = _node(np.where(mask, self.data, 0.0), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.where(mask, g, 0.0))

        out._backward = bwd
        return out

    def leaky_relu(self, slope=0.01):
        mask = self.data > 0
        out = _node(np.where(mask, self.data, slope * self.data), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.where(mask, g, slope * g))

        out._backward = bwd
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = _node(y, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - y * y))

        out._backward = bwd
        return out

    def exp(self):
        y = np.exp(self.data)
        out = _node(y, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g * y)

        out._backward = bwd
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        x = self.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g / x)

        out._backward = bwd
        return out

    def square(self):
        out = _node(self.data * self.data, (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(2.0 * g * self.data)

        out._backward = bwd
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out = _node(self.data.reshape(shape), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old))

        out._backward = bwd
        return out

    def sum(self):
        out = _node(np.asarray(self.data.sum()), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.broadcast_to(g, self.shape).astype(self.dtype))

        out._backward = bwd
        return out

    def mean(self):
        n = self.data.size
        return self.sum().scale(1.0 / n)

    def sum_axis1(self):
        """Row sums of a matrix -> vector of length n_rows."""
        if self.data.ndim != 2:
            raise ShapeError(f"sum_axis1 needs a matrix, got {self.shape}")
        out = _node(self.data.sum(axis=1), (self,))

        def bwd(g):
            if self.requires_grad:
                self._accumulate(np.repeat(g[:, None], self.shape[1], axis=1))

        out._backward = bwd
        return out

    def activate(self, name, leaky_slope=0.01):
        if name == "relu":
            return self.relu()
        if name == "leaky_relu":
            return self.leaky_relu(leaky_slope)
        if name == "tanh":
            return self.tanh()
        if name == "identity":
            return self
        raise ValueError(f"unknown activation {name!r}")


def _node(data, parents):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
    return out


def _as_tensor(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


def backward(loss: Tensor):
    """Run reverse-mode accumulation from a scalar loss node."""
    if loss.data.size != 1:
        raise AutodiffError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise AutodiffError("backward called on a node with no recorded graph "
                            "(no differentiable forward pass reaches it)")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                # interior activations are single-use; free their grads early
                node.grad = None
