"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough surface for this model: elementwise arithmetic, 2-D matmul,
reductions, concatenation/slicing, the graph gather/scatter primitives
(kernel-backed), and the gamma-family functions the Dirichlet losses need.
Graphs are built eagerly per forward pass; ``backward`` walks them once in
reverse topological order.  Gradient correctness is enforced against central
finite differences in the test suite, so every backward rule here has an
independent oracle.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels, numerics

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array plus an optional gradient tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def backward(self, gradient: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if gradient is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient needs a scalar")
            gradient = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.asarray(gradient, dtype=np.float64)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._backward(node.grad)):
                if grad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += grad

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = _result(self.data + other.data, (self, other))
        if out._parents:
            sa, sb = self.data.shape, other.data.shape
            out._backward = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out = _result(self.data * other.data, (self, other))
        if out._parents:
            a, b = self.data, other.data
            out._backward = lambda g: (
                _unbroadcast(g * b, a.shape),
                _unbroadcast(g * a, b.shape),
            )
        return out

    __rmul__ = __mul__

    def __sub__(self, other):
        other = as_tensor(other)
        out = _result(self.data - other.data, (self, other))
        if out._parents:
            sa, sb = self.data.shape, other.data.shape
            out._backward = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
        return out

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __truediv__(self, other):
        other = as_tensor(other)
        out = _result(self.data / other.data, (self, other))
        if out._parents:
            a, b = self.data, other.data
            out._backward = lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            )
        return out

    def __rtruediv__(self, other):
        return as_tensor(other).__truediv__(self)

    def __neg__(self):
        out = _result(-self.data, (self,))
        if out._parents:
            out._backward = lambda g: (-g,)
        return out

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out = _result(self.data**exponent, (self,))
        if out._parents:
            a = self.data
            out._backward = lambda g: (g * exponent * a ** (exponent - 1.0),)
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        out = _result(self.data @ other.data, (self, other))
        if out._parents:
            a, b = self.data, other.data
            out._backward = lambda g: (g @ b.T, a.T @ g)
        return out

    # -- elementwise functions ---------------------------------------------

    def exp(self):
        data = np.exp(self.data)
        out = _result(data, (self,))
        if out._parents:
            out._backward = lambda g: (g * data,)
        return out

    def log(self):
        out = _result(np.log(self.data), (self,))
        if out._parents:
            a = self.data
            out._backward = lambda g: (g / a,)
        return out

    def sqrt(self):
        data = np.sqrt(self.data)
        out = _result(data, (self,))
        if out._parents:
            out._backward = lambda g: (g * 0.5 / data,)
        return out

    def abs(self):
        out = _result(np.abs(self.data), (self,))
        if out._parents:
            sign = np.sign(self.data)
            out._backward = lambda g: (g * sign,)
        return out

    def clip(self, lo: float | None, hi: float | None):
        out = _result(np.clip(self.data, lo, hi), (self,))
        if out._parents:
            mask = np.ones_like(self.data)
            if lo is not None:
                mask = mask * (self.data >= lo)
            if hi is not None:
                mask = mask * (self.data <= hi)
            out._backward = lambda g: (g * mask,)
        return out

    def softplus(self):
        out = _result(np.logaddexp(0.0, self.data), (self,))
        if out._parents:
            sig = _sigmoid(self.data)
            out._backward = lambda g: (g * sig,)
        return out

    def leaky_relu(self, slope: float = 0.01):
        data = np.where(self.data > 0.0, self.data, slope * self.data)
        out = _result(data, (self,))
        if out._parents:
            local = np.where(self.data > 0.0, 1.0, slope)
            out._backward = lambda g: (g * local,)
        return out

    # -- shape and reductions ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = _result(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            shape = self.data.shape
            out._backward = lambda g: (_spread(g, shape, axis, keepdims),)
        return out

    def mean(self, axis=None, keepdims: bool = False):
        scale = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(scale))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _result(self.data.reshape(shape), (self,))
        if out._parents:
            old = self.data.shape
            out._backward = lambda g: (g.reshape(old),)
        return out

    @property
    def T(self):
        out = _result(self.data.T, (self,))
        if out._parents:
            out._backward = lambda g: (g.T,)
        return out

    def __getitem__(self, key):
        out = _result(self.data[key], (self,))
        if out._parents:
            shape = self.data.shape

            def backward(g):
                full = np.zeros(shape, dtype=np.float64)
                np.add.at(full, key, g)
                return (full,)

            out._backward = backward
        return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _spread(grad, shape, axis, keepdims) -> np.ndarray:
    """Inverse of a sum reduction: broadcast ``grad`` back to ``shape``."""
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def _result(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data) -> Tensor:
    """A trainable leaf tensor (copies its input)."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            return tuple(
                np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                for i in range(len(sizes))
            )

        out._backward = backward
    return out


def take_rows(t: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; scatter-add on the way back."""
    if t.data.ndim != 2:
        raise ValueError("take_rows expects a 2-D tensor")
    index = np.ascontiguousarray(index, dtype=np.int64)
    out = _result(t.data[index], (t,))
    if out._parents:
        n = t.data.shape[0]
        out._backward = lambda g: (
            kernels.scatter_add_rows(index, np.ascontiguousarray(g), n),
        )
    return out


def segment_sum(t: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Row-wise segmented sum of a 2-D tensor."""
    if t.data.ndim != 2:
        raise ValueError("segment_sum expects a 2-D tensor")
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    out = _result(kernels.segment_sum(t.data, segments, n_segments), (t,))
    if out._parents:
        out._backward = lambda g: (g[segments],)
    return out


def lgamma(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = _result(np.asarray(numerics.ln_gamma(t.data)), (t,))
    if out._parents:
        local = np.asarray(numerics.digamma(t.data))
        out._backward = lambda g: (g * local,)
    return out


def digamma(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = _result(np.asarray(numerics.digamma(t.data)), (t,))
    if out._parents:
        local = np.asarray(numerics.trigamma(t.data))
        out._backward = lambda g: (g * local,)
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Row-stabilized softmax; the max shift is a constant, which is exact
    because softmax is invariant to per-row shifts."""
    shift = np.max(t.data, axis=axis, keepdims=True)
    e = (t - Tensor(shift)).exp()
    return e / e.sum(axis=axis, keepdims=True)


def segment_softmax(logits: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Softmax of 1-D ``logits`` normalized within each segment.

    Returns an (E, 1) column so callers can scale per-edge message rows.
    The per-segment max shift is detached, exact for the same reason as in
    :func:`softmax`.
    """
    if logits.data.ndim != 1:
        raise ValueError("segment_softmax expects 1-D logits")
    segments = np.ascontiguousarray(segments, dtype=np.int64)
    shift = kernels.segment_max(logits.data, segments, n_segments)
    e = (logits - Tensor(shift[segments])).exp().reshape(-1, 1)
    denom = segment_sum(e, segments, n_segments)
    return e / take_rows(denom, segments)
