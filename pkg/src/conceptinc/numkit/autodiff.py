"""Reverse-mode gradients over NumPy arrays.

Every op here accepts plain arrays or :class:`Var` nodes. When no argument is
a ``Var`` the op returns a plain array, so one forward definition serves both
training (recorded) and inference (unrecorded) with bitwise-equal values.

Nodes are numbered at creation; since parents always precede children, a
descending sort of reachable nodes is a valid reverse topological order and
gradient accumulation happens in a fixed sequence.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import CapabilityError, DimensionError
from . import _backend

_counter = itertools.count()


class Var:
    __slots__ = ("value", "parents", "backward_fn", "order")
    __array_priority__ = 1000

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.order = next(_counter)

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    size = property(lambda self: self.value.size)
    T = property(lambda self: transpose(self))

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = lambda self, other: add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    __rsub__ = lambda self, other: sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = lambda self, other: mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise CapabilityError("division by a recorded value is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        handler = _UFUNCS.get(ufunc)
        if method != "__call__" or kwargs or handler is None:
            raise CapabilityError(f"primitive {ufunc.__name__}.{method} is not differentiable here")
        return handler(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        raise CapabilityError(f"numpy.{func.__name__} is not a recorded primitive; use numkit ops")


def param(value) -> Var:
    """Leaf node for a trainable tensor."""
    return Var(np.asarray(value, dtype=np.float64))


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _record(value, parents, backward_fn):
    pv = tuple(p for p in parents if isinstance(p, Var))
    if not pv:
        return value
    return Var(value, parents, backward_fn)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- products


def _mm(a, b):
    if a.ndim < 1 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} and {b.shape}")
    if b.ndim == 2:
        a2 = np.ascontiguousarray(a.reshape(-1, a.shape[-1]))
        out = np.empty((a2.shape[0], b.shape[1]))
        _backend.matmul_into(a2, np.ascontiguousarray(b), out)
        return out.reshape(a.shape[:-1] + (b.shape[1],))
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0]:
        out = np.empty((a.shape[0], a.shape[1], b.shape[2]))
        _backend.bmm_into(np.ascontiguousarray(a), np.ascontiguousarray(b), out)
        return out
    raise DimensionError(f"unsupported matmul shapes {a.shape} and {b.shape}")


def matmul(a, b):
    """Matrix product with a fixed, left-to-right accumulation order.

    Supports ``[..., m, k] @ [k, n]`` and batched ``[B, m, k] @ [B, k, n]``.
    """
    av, bv = value_of(a), value_of(b)
    out = _mm(av, bv)

    def backward(g):
        ga = gb = None
        if isinstance(a, Var):
            ga = _mm(g, np.swapaxes(bv, -1, -2))
        if isinstance(b, Var):
            if bv.ndim == 2:
                k = av.shape[-1]
                gb = _mm(av.reshape(-1, k).T, g.reshape(-1, g.shape[-1]))
            else:
                gb = _mm(np.swapaxes(av, -1, -2), g)
        return ga, gb

    return _record(out, (a, b), backward)


# ------------------------------------------------------------- elementwise


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    sa, sb = np.shape(av), np.shape(bv)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    sa, sb = np.shape(av), np.shape(bv)

    def backward(g):
        ga = _unbroadcast(g * bv, sa) if isinstance(a, Var) else None
        gb = _unbroadcast(g * av, sb) if isinstance(b, Var) else None
        return ga, gb

    return _record(out, (a, b), backward)


def neg(x):
    return _record(-value_of(x), (x,), lambda g: (-g,))


def square(x):
    xv = value_of(x)
    return _record(xv * xv, (x,), lambda g: (g * (2.0 * xv),))


def abs_(x):
    xv = value_of(x)
    return _record(np.abs(xv), (x,), lambda g: (g * np.sign(xv),))


def _sigmoid(v):
    # tanh form never overflows
    return 0.5 + 0.5 * np.tanh(0.5 * v)


def sigmoid(x):
    s = _sigmoid(np.asarray(value_of(x), dtype=np.float64))
    return _record(s, (x,), lambda g: (g * (s * (1.0 - s)),))


def silu(x):
    return mul(x, sigmoid(x))


def softmax(x, axis=-1):
    xv = value_of(x)
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record(s, (x,), backward)


def layer_norm(x, eps=1e-5):
    """Zero-mean, unit-variance rows along the last axis (no affine part)."""
    xv = value_of(x)
    xc = xv - xv.mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * r

    def backward(g):
        return (r * (g - g.mean(axis=-1, keepdims=True) - y * (g * y).mean(axis=-1, keepdims=True)),)

    return _record(y, (x,), backward)


# -------------------------------------------------------------- reductions


def sum_(x, axis=None, keepdims=False):
    xv = value_of(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    shape = xv.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False):
    xv = value_of(x)
    count = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis, keepdims), 1.0 / float(count))


# ------------------------------------------------------------ restructuring


def reshape(x, shape):
    xv = value_of(x)
    src = xv.shape
    return _record(xv.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None):
    xv = value_of(x)
    if axes is None:
        axes = tuple(reversed(range(xv.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(xv, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1, a2):
    axes = list(range(value_of(x).ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def take(x, idx):
    """Basic or fancy indexing (slicing and masking)."""
    xv = value_of(x)
    out = xv[idx]

    def backward(g):
        z = np.zeros_like(xv)
        np.add.at(z, idx, g)
        return (z,)

    return _record(np.array(out, copy=True), (x,), backward)


def stack(items, axis=0):
    vals = [value_of(v) for v in items]
    out = np.stack(vals, axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return _record(out, tuple(items), backward)


def concatenate(items, axis=0):
    vals = [value_of(v) for v in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(out, tuple(items), backward)


_UFUNCS = {
    np.add: add,
    np.subtract: sub,
    np.multiply: mul,
    np.matmul: matmul,
    np.negative: neg,
    np.square: square,
    np.absolute: abs_,
}


# ---------------------------------------------------------------- gradients


def grad(loss, params):
    """Gradients of scalar ``loss`` with respect to each leaf in ``params``.

    Parameters the loss does not depend on (including a constant loss) get
    all-zero gradients.
    """
    if not isinstance(loss, Var):
        return [np.zeros_like(value_of(p)) for p in params]
    if loss.value.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.value.shape}")

    seen = {}
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        if id(node) in seen:
            continue
        seen[id(node)] = node
        stack_.extend(p for p in node.parents if isinstance(p, Var))

    grads = {id(loss): np.ones_like(loss.value)}
    for node in sorted(seen.values(), key=lambda n: n.order, reverse=True):
        g = grads.pop(id(node), None) if node.backward_fn is not None else grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not isinstance(parent, Var) or pg is None:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return [np.array(grads.get(id(p), np.zeros_like(p.value)), copy=True).reshape(p.value.shape)
            for p in params]


def value_and_grad(fn, *arrays):
    """Evaluate ``fn`` on fresh leaf nodes and return ``(value, grads)``."""
    leaves = [param(a) for a in arrays]
    out = fn(*leaves)
    return float(value_of(out).sum()), grad(out, leaves)
