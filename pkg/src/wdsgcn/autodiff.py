"""Small reverse-mode autodiff over rank-1/rank-2 float64 arrays.

A :class:`Tape` records every operation applied to its :class:`Var` objects
in insertion order; :meth:`Tape.backward` walks that list in reverse. Graph
structure (edge endpoints, segment ids) lives in plain integer index arrays
that are passed to the gather/segment operations, never in tensor shapes.

With ``Tape(enabled=False)`` operations only compute values, which is how
detached forward passes are run.
"""
from __future__ import annotations

import numpy as np

from ._kernels import scatter_add_rows, segment_max as _segment_max_kernel
from ._kernels import selu as _selu_kernel, selu_grad as _selu_grad_kernel

POWER_CLAMP = 1e-12


class Var:
    __slots__ = ("value", "tape", "parents", "vjp", "requires_grad", "grad", "name", "index")

    def __init__(self, value, tape, parents=(), vjp=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.nodes = []

    def leaf(self, value, name=None, requires_grad=True) -> Var:
        v = Var(_as_array(value), self, requires_grad=requires_grad and self.enabled, name=name)
        if v.requires_grad:
            self._push(v)
        return v

    def const(self, value) -> Var:
        return Var(_as_array(value), self)

    def _push(self, var):
        var.index = len(self.nodes)
        self.nodes.append(var)

    def record(self, value, parents, vjp) -> Var:
        parents = tuple(parents)
        if self.enabled and any(p.requires_grad for p in parents):
            v = Var(value, self, parents, vjp, requires_grad=True)
            self._push(v)
            return v
        return Var(value, self)

    def backward(self, loss: Var) -> dict:
        """Accumulate d(loss)/d(leaf) into every leaf's ``.grad``.

        Returns ``{leaf name: gradient}`` for named leaves. Calling it twice
        recomputes the same gradients from scratch.
        """
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads = {}
        for node in self.nodes:
            node.grad = None
        if not loss.requires_grad:
            return {}
        grads[loss.index] = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.vjp is None:
                node.grad = g
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        leaves = [n for n in self.nodes if n.vjp is None]
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.value)
        return {n.name: n.grad for n in leaves if n.name is not None}


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim > 2:
        raise ValueError(f"tensors are limited to rank 2, got shape {arr.shape}")
    return arr


def _lift(x, tape):
    if isinstance(x, Var):
        return x
    return Var(_as_array(x), tape)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
    )


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def neg(a):
    return a.tape.record(-a.value, (a,), lambda g: (-g,))


def maximum(a, b):
    """Elementwise max; on ties the gradient goes to ``a``."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    take_a = a.value >= b.value
    return tape.record(
        np.where(take_a, a.value, b.value),
        (a, b),
        lambda g: (_unbroadcast(np.where(take_a, g, 0.0), a.shape), _unbroadcast(np.where(take_a, 0.0, g), b.shape)),
    )


def mask_fill(a, mask, value):
    """Replace entries where ``mask`` is true by the constant ``value``."""
    mask = np.asarray(mask, dtype=bool)
    return a.tape.record(np.where(mask, value, a.value), (a,), lambda g: (np.where(mask, 0.0, g),))


def relu(a):
    pos = a.value > 0
    return a.tape.record(np.where(pos, a.value, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def selu(a):
    x = a.value
    out, ex = _selu_kernel(x)
    return a.tape.record(out, (a,), lambda g: (g * _selu_grad_kernel(x, ex),))


def signed_power(a, p):
    """``sgn(a) |a|^p``; derivative is 0 at a == 0 and |a| is clamped at 1e-12 for p < 1."""
    x = a.value
    ax = np.abs(x)
    out = np.sign(x) * ax**p

    def vjp(g):
        base = np.maximum(ax, POWER_CLAMP) if p < 1 else ax
        d = np.where(x == 0, 0.0, p * base ** (p - 1.0))
        return (g * d,)

    return a.tape.record(out, (a,), vjp)


# --------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.record(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def slice_rows(a, start, stop):
    n = a.shape[0]

    def vjp(g):
        full = np.zeros((n,) + g.shape[1:])
        full[start:stop] = g
        return (full,)

    return a.tape.record(a.value[start:stop], (a,), vjp)


def slice_cols(a, start, stop):
    def vjp(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    return a.tape.record(a.value[:, start:stop], (a,), vjp)


def column(a):
    """Reshape a vector into an ``(n, 1)`` matrix."""
    return a.tape.record(a.value.reshape(-1, 1), (a,), lambda g: (g.reshape(a.shape),))


def flatten(a):
    return a.tape.record(a.value.reshape(-1), (a,), lambda g: (g.reshape(a.shape),))


def concat(parts, axis=1):
    tape = _tape_of(*parts)
    parts = [_lift(p, tape) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return tape.record(
        np.concatenate([p.value for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def gather(a, index):
    """Rows ``a[index]``; backward scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    return a.tape.record(a.value[index], (a,), lambda g: (scatter_add_rows(g, index, n),))


def segment_sum(a, segment, n_segments):
    segment = np.asarray(segment, dtype=np.int64)
    return a.tape.record(scatter_add_rows(a.value, segment, n_segments), (a,), lambda g: (g[segment],))


def segment_max(a, segment, n_segments):
    """Per-segment max over rows; gradient goes to the first arg-max row."""
    segment = np.asarray(segment, dtype=np.int64)
    out, arg = _segment_max_kernel(a.value, segment, n_segments)
    if np.any(arg < 0):
        empty = np.flatnonzero(arg.reshape(n_segments, -1)[:, 0] < 0)
        raise ValueError(f"segments without incident rows: {empty[:10].tolist()}")
    n = a.shape[0]

    def vjp(g):
        if g.ndim == 1:
            return (scatter_add_rows(g, arg, n),)
        # each (row, column) wins at most one segment, so plain assignment suffices
        full = np.zeros(a.shape)
        full[arg, np.arange(g.shape[1])] = g
        return (full,)

    return a.tape.record(out, (a,), vjp)


def total(a):
    return a.tape.record(np.array(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean_abs(a):
    """L1 loss: mean of absolute values (subgradient 0 at 0)."""
    n = a.value.size
    return a.tape.record(np.array(np.abs(a.value).mean()), (a,), lambda g: (float(g) * np.sign(a.value) / n,))
