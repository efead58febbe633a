"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``WDSGCN_DISABLE_NUMBA=1`` before import to force the numpy path.
Both paths agree exactly on the max/scatter kernels and to rounding on the
Hazen-Williams flow kernel; ``tests/test_kernels.py`` checks this and ``benchmarks/bench_kernels.py`` times them against each other.
"""
from __future__ import annotations

import os

import numpy as np

HW_EXPONENT = 1.852

_disabled = os.environ.get("WDSGCN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _disabled:
        raise ImportError("numba disabled by WDSGCN_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# numpy implementations


def segment_max_numpy(values, segment, n_segments):
    """Column-wise max of ``values`` rows grouped by ``segment``.

    Returns ``(out, arg)`` where ``arg[s, f]`` is the row index that won;
    ties go to the lowest row index.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        out, arg = segment_max_numpy(values.reshape(-1, 1), segment, n_segments)
        return out[:, 0], arg[:, 0]
    n_rows, n_feat = values.shape
    order = np.argsort(segment, kind="stable")
    seg_sorted = segment[order]
    starts = np.flatnonzero(np.r_[True, seg_sorted[1:] != seg_sorted[:-1]])
    present = seg_sorted[starts]
    out = np.full((n_segments, n_feat), -np.inf)
    arg = np.full((n_segments, n_feat), -1, dtype=np.int64)
    if n_rows == 0:
        return out, arg
    out[present] = np.maximum.reduceat(values[order], starts, axis=0)
    # first row (in original order) attaining the max of its segment
    hit = values == out[segment]
    rows = np.where(hit, np.arange(n_rows)[:, None], n_rows)
    first = np.full((n_segments, n_feat), n_rows, dtype=np.int64)
    np.minimum.at(first, segment, rows)
    arg[present] = first[present]
    return out, arg


def propagate_heads_numpy(heads, src, dst, loss, pinned, max_iter):
    """Jacobi sweeps of ``h_v <- max(h_v, max_{e=(v,u)} h_u - loss_e)``.

    Returns ``(heads, iterations, converged)`` where ``iterations`` is the
    number of sweeps that changed at least one head.
    """
    h = np.array(heads, dtype=np.float64)
    n = h.shape[0]
    free = ~pinned
    for j in range(max_iter + 1):
        msg = h[dst] - loss
        agg = np.full(n, -np.inf)
        np.maximum.at(agg, src, msg)
        new = np.where(free, np.maximum(h, agg), h)
        if np.array_equal(new, h):
            return h, j, True
        h = new
    return h, max_iter, False


def scatter_add_rows_numpy(values, index, n_rows):
    """``out[index[i]] += values[i]`` for 1-D or 2-D ``values``."""
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n_rows,) + values.shape[1:])
    np.add.at(out, index, values)
    return out


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def selu(x):
    """Returns ``(selu(x), exp(min(x, 0)))``; the second array feeds :func:`selu_grad`.

    Stays on numpy in both modes: its SIMD ``exp`` beats a scalar numba loop.
    """
    ex = np.minimum(x, 0.0)
    np.exp(ex, out=ex)
    out = ex - 1.0
    out *= SELU_SCALE * SELU_ALPHA
    pos = np.maximum(x, 0.0)
    pos *= SELU_SCALE
    out += pos
    return out, ex


def selu_grad(x, ex):
    return np.where(x > 0, SELU_SCALE, (SELU_SCALE * SELU_ALPHA) * ex)


def hw_flow_numpy(dh, r, reg):
    """Flow from head drop and d(flow)/d(dh) with regularised derivative."""
    inv = 1.0 / HW_EXPONENT
    a = np.abs(dh)
    q = np.sign(dh) * (a / r) ** inv
    dq = inv * r ** (-inv) * (a + reg) ** (inv - 1.0)
    return q, dq


# --------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True)
    def _segment_max_numba(values, segment, n_segments):
        n_rows, n_feat = values.shape
        out = np.full((n_segments, n_feat), -np.inf)
        arg = np.full((n_segments, n_feat), -1, dtype=np.int64)
        for i in range(n_rows):
            s = segment[i]
            for f in range(n_feat):
                v = values[i, f]
                if arg[s, f] < 0 or v > out[s, f]:
                    out[s, f] = v
                    arg[s, f] = i
        return out, arg

    def segment_max_numba(values, segment, n_segments):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim == 1:
            out, arg = _segment_max_numba(values.reshape(-1, 1), segment, n_segments)
            return out[:, 0], arg[:, 0]
        return _segment_max_numba(values, segment, n_segments)

    @njit(cache=True)
    def propagate_heads_numba(heads, src, dst, loss, pinned, max_iter):
        h = heads.copy()
        n = h.shape[0]
        n_edges = src.shape[0]
        agg = np.empty(n)
        for j in range(max_iter + 1):
            for v in range(n):
                agg[v] = -np.inf
            for e in range(n_edges):
                m = h[dst[e]] - loss[e]
                if m > agg[src[e]]:
                    agg[src[e]] = m
            changed = False
            # Jacobi: agg was built from iteration-j heads only
            for v in range(n):
                if not pinned[v] and agg[v] > h[v]:
                    h[v] = agg[v]
                    changed = True
            if not changed:
                return h, j, True
        return h, max_iter, False

    @njit(cache=True)
    def _scatter_add_2d(values, index, n_rows):
        out = np.zeros((n_rows, values.shape[1]))
        for i in range(values.shape[0]):
            k = index[i]
            for f in range(values.shape[1]):
                out[k, f] += values[i, f]
        return out

    @njit(cache=True)
    def _scatter_add_1d(values, index, n_rows):
        out = np.zeros(n_rows)
        for i in range(values.shape[0]):
            out[index[i]] += values[i]
        return out

    def scatter_add_rows_numba(values, index, n_rows):
        values = np.ascontiguousarray(values, dtype=np.float64)
        index = np.ascontiguousarray(index, dtype=np.int64)
        if values.ndim == 1:
            return _scatter_add_1d(values, index, n_rows)
        return _scatter_add_2d(values, index, n_rows)

    @njit(cache=True)
    def hw_flow_numba(dh, r, reg):
        inv = 1.0 / HW_EXPONENT
        n = dh.shape[0]
        q = np.empty(n)
        dq = np.empty(n)
        for i in range(n):
            a = abs(dh[i])
            s = 1.0 if dh[i] > 0 else (-1.0 if dh[i] < 0 else 0.0)
            q[i] = s * (a / r[i]) ** inv
            dq[i] = inv * r[i] ** (-inv) * (a + reg) ** (inv - 1.0)
        return q, dq


if HAVE_NUMBA:
    segment_max = segment_max_numba
    propagate_heads_kernel = propagate_heads_numba
    hw_flow = hw_flow_numba
    scatter_add_rows = scatter_add_rows_numba
else:
    segment_max = segment_max_numpy
    propagate_heads_kernel = propagate_heads_numpy
    hw_flow = hw_flow_numpy
    scatter_add_rows = scatter_add_rows_numpy


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
