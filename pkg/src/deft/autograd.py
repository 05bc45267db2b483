"""Dense 2-D tensors with reverse-mode gradients.

Every value is a float64 matrix. Operations record their inputs and a
closure producing the input gradients; ``Tensor.backward`` walks that record
in reverse topological order. Broadcasting is limited to a (1, n) row vector
against an (m, n) matrix, plus an (m, 1) column factor in :func:`mul`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_GRAD_ENABLED = True


class NumericError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad: bool = False):
        v = np.array(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.value[0, 0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if grad is None:
            if self.value.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def make_op(value: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap a forward result; ``backward(g)`` returns one gradient (or None) per parent."""
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.op = op
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and shape[0] == g.shape[0]:
        return g.sum(axis=1, keepdims=True)
    raise ShapeError(f"cannot reduce gradient {g.shape} to {shape}")


def _check_row_broadcast(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape:
        return
    if (a.shape[0] == 1 or b.shape[0] == 1) and a.shape[1] == b.shape[1]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- arithmetic ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return make_op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_row_broadcast(a, b, "add")
    return make_op(a.value + b.value, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_row_broadcast(a, b, "sub")
    return make_op(a.value - b.value, (a, b), lambda g: (_reduce_to(g, a.shape), -_reduce_to(g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; ``b`` may also be a (1, n) row or an (m, 1) column."""
    if not (a.shape == b.shape or (b.shape[0] == 1 and b.shape[1] == a.shape[1])
            or (b.shape[1] == 1 and b.shape[0] == a.shape[0])):
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return make_op(av * bv, (a, b), lambda g: (g * bv, _reduce_to(g * av, b.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_op(a.value * c, (a,), lambda g: (g * c,), "scale")


def transpose(a: Tensor) -> Tensor:
    return make_op(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


# -- nonlinearities -----------------------------------------------------------


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.value > 0
    d = np.where(pos, 1.0, slope)
    return make_op(np.where(pos, x.value, slope * x.value), (x,), lambda g: (g * d,), "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return make_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return make_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def sin(x: Tensor) -> Tensor:
    v = x.value
    return make_op(np.sin(v), (x,), lambda g: (g * np.cos(v),), "sin")


def cos(x: Tensor) -> Tensor:
    v = x.value
    return make_op(np.cos(v), (x,), lambda g: (-g * np.sin(v),), "cos")


ACTIVATIONS = {"leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid}


# -- structure ----------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    other = 1 - axis
    if len({t.shape[other] for t in tensors}) != 1:
        raise ShapeError("concat: mismatched shapes " + ", ".join(str(t.shape) for t in tensors))
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_op(np.concatenate([t.value for t in tensors], axis=axis), tensors, back, "concat")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return make_op(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def sum_cols(x: Tensor) -> Tensor:
    """Row sums, (m, n) -> (m, 1)."""
    n = x.shape[1]
    return make_op(x.value.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, n, axis=1),), "sum_cols")


def mean_rows(x: Tensor) -> Tensor:
    """Column means, (m, n) -> (1, n)."""
    m = x.shape[0]
    return make_op(x.value.mean(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g / m, m, axis=0),), "mean_rows")


def sum_rows(x: Tensor) -> Tensor:
    m = x.shape[0]
    return make_op(x.value.sum(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g, m, axis=0),), "sum_rows")


def repeat_rows(x: Tensor, m: int) -> Tensor:
    """(1, n) -> (m, n)."""
    if x.shape[0] != 1:
        raise ShapeError("repeat_rows needs a row vector")
    return make_op(np.repeat(x.value, m, axis=0), (x,), lambda g: (g.sum(axis=0, keepdims=True),), "repeat_rows")


def selection_matrix(index: np.ndarray, n: int) -> sp.csr_matrix:
    index = np.asarray(index, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(index)), (np.arange(len(index)), index)), shape=(len(index), n))


def gather_rows(x: Tensor, index: np.ndarray, selector: sp.csr_matrix | None = None) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        sel = selector if selector is not None else selection_matrix(index, n)
        return (np.asarray(sel.T @ g),)

    return make_op(x.value[index], (x,), back, "gather_rows")


def spmm(S: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a tensor."""
    if S.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: {S.shape} @ {x.shape}")
    St = None

    def back(g):
        nonlocal St
        St = S.T.tocsr() if St is None else St
        return (np.asarray(St @ g),)

    return make_op(np.asarray(S @ x.value), (x,), back, "spmm")


# -- normalizations and losses -------------------------------------------------


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Row softmax over entries where ``mask`` is true; masked entries are exactly 0.

    Rows without any unmasked entry come out as all zeros.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape:
        raise ShapeError("mask shape differs from scores")
    s = np.where(mask, scores.value, -np.inf)
    row_max = s.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(mask, np.exp(s - row_max), 0.0)
    z = e.sum(axis=1, keepdims=True)
    y = np.divide(e, z, out=np.zeros_like(e), where=z > 0)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_op(y, (scores,), back, "masked_softmax")


def segment_softmax(scores: Tensor, offsets: np.ndarray) -> Tensor:
    """Softmax of an (E, 1) score column within CSR row segments ``offsets``."""
    offsets = np.asarray(offsets, dtype=np.int64)
    v = scores.value[:, 0]
    counts = np.diff(offsets)
    if np.any(counts == 0):
        raise ShapeError("segment_softmax: empty segment")
    seg = np.repeat(np.arange(len(counts)), counts)
    seg_max = np.maximum.reduceat(v, offsets[:-1])
    e = np.exp(v - seg_max[seg])
    z = np.add.reduceat(e, offsets[:-1])
    y = (e / z[seg])[:, None]

    def back(g):
        dot = np.add.reduceat((g * y)[:, 0], offsets[:-1])
        return (y * (g - dot[seg][:, None]),)

    return make_op(y, (scores,), back, "segment_softmax")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B, C = logits.shape
    if len(labels) != B:
        raise ShapeError("one label per logit row is required")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError("label out of range")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(B), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        return (p * (g[0, 0] / B),)

    return make_op(np.array([[loss]]), (logits,), back, "cross_entropy")
