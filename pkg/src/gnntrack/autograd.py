"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape`. With no
tape active (evaluation mode) they only compute values.

    with Tape() as tape:
        loss = (x @ w).sum()
    grads = tape.gradient(loss, {"w": w})
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from . import kernels

_state = threading.local()
_tape_ids = itertools.count(1)


def _tapes():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def _active_tape():
    stack = _tapes()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can take part in taped computations."""

    __slots__ = ("data", "requires_grad", "name", "_tape_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._tape_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records differentiable operations in execution order."""

    def __init__(self):
        self.id = next(_tape_ids)
        self.records = []  # (output, inputs, backward_fn)

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().remove(self)
        return False

    def _tracks(self, t):
        return isinstance(t, Tensor) and (t.requires_grad or t._tape_id == self.id)

    def record(self, out, inputs, backward_fn):
        out._tape_id = self.id
        self.records.append((out, inputs, backward_fn))

    def gradient(self, loss, params):
        """Return d(loss)/d(param) for every entry of ``params``.

        ``params`` is a mapping name -> Tensor (or a sequence of tensors, in
        which case a list is returned). Parameters the loss does not reach
        get zero gradients.
        """
        if not isinstance(loss, Tensor) or loss._tape_id != self.id:
            raise RuntimeError("gradient() needs a value produced on this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self.records):
            g = grads.pop(id(out), None) if out is not loss else grads.get(id(out))
            if g is None:
                continue
            in_grads = backward_fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not self._tracks(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        if isinstance(params, dict):
            return {k: _grad_for(grads, p) for k, p in params.items()}
        return [_grad_for(grads, p) for p in params]


def _grad_for(grads, p):
    g = grads.get(id(p))
    if g is None:
        return np.zeros_like(p.data)
    return np.broadcast_to(g, p.data.shape).copy() if g.shape != p.data.shape else g


@contextmanager
def record_branches():
    """Collect the branch pattern (sign masks) of every piecewise op run inside
    the block. Two evaluations lie on the same smooth piece exactly when their
    patterns are equal, which is what finite-difference checks need to know."""
    log = []
    saved = getattr(_state, "branches", None)
    _state.branches = log
    try:
        yield log
    finally:
        _state.branches = saved


def _branch(mask):
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(np.packbits(mask, axis=None).tobytes())


@contextmanager
def no_grad():
    """Suspend recording (evaluation mode) inside the block."""
    saved = list(_tapes())
    _tapes().clear()
    try:
        yield
    finally:
        _tapes().extend(saved)


def is_recording():
    return _active_tape() is not None


def _make(value, inputs, backward_fn):
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    _branch(mask)
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so neither branch overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x):
    """log(1 + exp(x)) without overflow or cancellation."""
    x = as_tensor(x)
    z = x.data
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (x,), lambda g: (g * sig,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def abs_(x):
    x = as_tensor(x)
    _branch(x.data > 0)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def clip(x, lo, hi):
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    _branch(np.stack([x.data >= lo, x.data <= hi]))
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ----------------------------------------------------------------- reductions

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), back)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / n)


# --------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x):
    x = as_tensor(x)
    return _make(x.data.T, (x,), lambda g: (g.T,))


# ------------------------------------------------------------ structural ops

def concat(parts, axis=1):
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis)
                     for k in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def take_rows(x, index):
    """Gather rows ``x[index]``; the backward pass scatter-adds."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(x.data)
        kernels.scatter_add_rows(out, index, np.ascontiguousarray(g))
        return (out,)

    return _make(x.data[index], (x,), back)


def scatter_add_rows(values, index, n_rows):
    """Segment sum: ``out[index[e]] += values[e]`` over an ``n_rows`` output."""
    values = as_tensor(values)
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n_rows,) + values.shape[1:])
    kernels.scatter_add_rows(out, index, np.ascontiguousarray(values.data))
    return _make(out, (values,), lambda g: (g[index],))


def row_norm(x, floor=0.0):
    """Euclidean norm of each row, shape (n, 1)."""
    return sqrt(sum_(x * x, axis=1, keepdims=True) + floor)


def l2_normalize(x):
    x = as_tensor(x)
    norms = np.linalg.norm(x.data, axis=1)
    if np.any(norms == 0):
        raise FloatingPointError("cannot normalize a zero-norm row")
    return x / row_norm(x)


def cosine_rows(a, b):
    """Row-wise cosine similarity, shape (n, 1); zero when either row is zero."""
    a, b = as_tensor(a), as_tensor(b)
    na = np.linalg.norm(a.data, axis=1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=1, keepdims=True)
    dot = np.sum(a.data * b.data, axis=1, keepdims=True)
    ok = (na > 0) & (nb > 0)
    den = np.where(ok, na * nb, 1.0)
    cos = np.where(ok, dot / den, 0.0)

    def back(g):
        sa = np.where(ok, na * na, 1.0)
        sb = np.where(ok, nb * nb, 1.0)
        ga = np.where(ok, g * (b.data / den - cos * a.data / sa), 0.0)
        gb = np.where(ok, g * (a.data / den - cos * b.data / sb), 0.0)
        return ga, gb

    return _make(cos, (a, b), back)
