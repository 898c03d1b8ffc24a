"""Minimal array-level reverse-mode differentiation.

Every function in this module accepts plain ``numpy`` arrays or :class:`Var`
objects. With plain arrays it is a thin numpy call and nothing is recorded,
so model code written against these functions runs at full speed outside of
training and is differentiated when any input is a :class:`Var`.

Nodes are appended to their :class:`Tape` in creation order, which is a
topological order; :meth:`Tape.backward` walks it once in reverse.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "value",
    "is_var",
    "exp", "log", "tanh", "sqrt", "softplus", "relu", "square",
    "sum", "mean", "reshape", "concatenate", "take_along_axis", "where",
    "cumsum", "softmax", "logsumexp", "logaddexp", "matmul",
]


class Var:
    """A recorded array value. Arithmetic operators are overloaded."""

    __array_ufunc__ = None  # make numpy defer to the reflected operators
    __slots__ = ("value", "tape", "parents", "index", "grad")

    def __init__(self, val: np.ndarray, tape: "Tape", parents=()):
        self.value = np.asarray(val, dtype=np.float64)
        self.tape = tape
        self.parents = parents
        self.grad: Optional[np.ndarray] = None
        self.index = tape._push(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)


class Tape:
    """Records :class:`Var` nodes; gradients are accumulated per node."""

    def __init__(self):
        self.nodes: list[Var] = []

    def _push(self, var: Var) -> int:
        self.nodes.append(var)
        return len(self.nodes) - 1

    def variable(self, val) -> Var:
        return Var(np.array(val, dtype=np.float64), self)

    def backward(self, output: Var) -> None:
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        if output.value.size != 1:
            raise ValueError("backward needs a scalar output")
        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[output.index] = np.ones_like(output.value)
        for node in reversed(self.nodes[: output.index + 1]):
            g = grads[node.index]
            node.grad = g
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                prev = grads[parent.index]
                grads[parent.index] = contrib if prev is None else prev + contrib

    def gradients(self, output: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
        self.backward(output)
        return [np.zeros_like(v.value) if v.grad is None else v.grad for v in leaves]


# ---------------------------------------------------------------------------
# helpers


def is_var(x) -> bool:
    return isinstance(x, Var)


def value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Optional[Tape]:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _record(out_val, tape: Tape, links: Iterable[tuple[object, Callable]]) -> Var:
    parents = tuple((p, f) for p, f in links if isinstance(p, Var))
    return Var(out_val, tape, parents)


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a + b
    av, bv = value(a), value(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, tape, [(a, lambda g: _unbroadcast(g, sa)),
                               (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a - b
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av - bv, tape, [(a, lambda g: _unbroadcast(g, sa)),
                                   (b, lambda g: -_unbroadcast(g, sb))])


def mul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a * b
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av * bv, tape, [(a, lambda g: _unbroadcast(g * bv, sa)),
                                   (b, lambda g: _unbroadcast(g * av, sb))])


def div(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a / b
    av, bv = value(a), value(b)
    out = av / bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, tape, [(a, lambda g: _unbroadcast(g / bv, sa)),
                               (b, lambda g: _unbroadcast(-g * out / bv, sb))])


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _record(-a.value, a.tape, [(a, lambda g: -g)])


def power(a, p: float):
    if not isinstance(a, Var):
        return a**p
    av = a.value
    return _record(av**p, a.tape, [(a, lambda g: g * p * av ** (p - 1))])


def matmul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a @ b
    av, bv = value(a), value(b)
    return _record(av @ bv, tape, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


# ---------------------------------------------------------------------------
# elementwise unary


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    out = np.exp(a.value)
    return _record(out, a.tape, [(a, lambda g: g * out)])


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    av = a.value
    return _record(np.log(av), a.tape, [(a, lambda g: g / av)])


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    out = np.tanh(a.value)
    return _record(out, a.tape, [(a, lambda g: g * (1.0 - out * out))])


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(a)
    out = np.sqrt(a.value)
    return _record(out, a.tape, [(a, lambda g: g * 0.5 / out)])


def square(a):
    if not isinstance(a, Var):
        return np.square(a)
    av = a.value
    return _record(av * av, a.tape, [(a, lambda g: 2.0 * g * av)])


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(a):
    if not isinstance(a, Var):
        return _softplus(a)
    av = a.value
    return _record(_softplus(av), a.tape, [(a, lambda g: g * _sigmoid(av))])


def relu(a):
    if not isinstance(a, Var):
        return np.maximum(a, 0.0)
    av = a.value
    return _record(np.maximum(av, 0.0), a.tape, [(a, lambda g: g * (av > 0))])


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def sum(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _record(np.sum(a.value, axis=axis, keepdims=keepdims), a.tape, [(a, vjp)])


def mean(a, axis=None, keepdims=False):
    size = np.size(value(a)) if axis is None else np.shape(value(a))[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / size)


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.shape
    return _record(a.value.reshape(shape), a.tape, [(a, lambda g: g.reshape(old))])


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a: Var, idx):
    shape = a.shape
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return out

    return _record(a.value[idx], a.tape, [(a, vjp)])


def concatenate(arrays: Sequence, axis=0):
    tape = _tape_of(*arrays)
    vals = [value(x) for x in arrays]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [np.shape(v)[axis] for v in vals])
    links = []
    for k, x in enumerate(arrays):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[k], bounds[k + 1])
        links.append((x, lambda g, sl=tuple(sl): g[sl]))
    return _record(out, tape, links)


def take_along_axis(a, indices: np.ndarray, axis: int = -1):
    """Gather with ``indices`` of length 1 along ``axis``."""
    if not isinstance(a, Var):
        return np.take_along_axis(a, indices, axis=axis)
    if indices.shape[axis] != 1:
        raise ValueError("only single-element gathers are supported")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.put_along_axis(out, indices, g, axis=axis)
        return out

    return _record(np.take_along_axis(a.value, indices, axis=axis), a.tape, [(a, vjp)])


def where(cond: np.ndarray, a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, tape, [(a, lambda g: _unbroadcast(np.where(cond, g, 0.0), sa)),
                               (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), sb))])


def cumsum(a, axis=-1):
    if not isinstance(a, Var):
        return np.cumsum(a, axis=axis)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return _record(np.cumsum(a.value, axis=axis), a.tape, [(a, vjp)])


def logsumexp(a, axis=-1):
    av = value(a)
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    # the shift is a constant; its gradient contributions cancel exactly
    return reshape(log(sum(exp(a - m), axis=axis, keepdims=True)) + m,
                   np.squeeze(m, axis=axis).shape)


def logaddexp(a, b):
    m = np.maximum(value(a), value(b))
    return log(exp(a - m) + exp(b - m)) + m


def softmax(a, axis=-1):
    av = value(a)
    m = np.max(av, axis=axis, keepdims=True)
    e = exp(a - m)
    return e / sum(e, axis=axis, keepdims=True)
