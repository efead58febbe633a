"""Parameter-free head propagation and flow/demand reconstruction.

Given per-edge flow estimates, every directed edge ``e = (v, u)`` sends
``h_u - w_e`` to ``v`` with ``w_e = ReLU(-r_e sgn(q_e) |q_e|^x)`` (the head
drop across an inflow). Nodes keep the maximum of their own head and the
incoming messages until nothing changes. Starting non-reservoir nodes at a
floor below every reachable message guarantees this happens within
``n_nodes`` sweeps. Heads are then turned back into flows and demands
through the Hazen-Williams relation.

Functions take any ``graph`` exposing ``src``, ``dst``, ``resistance``,
``reservoir_mask``, ``reservoir_head`` and ``n_nodes`` (a
:class:`~wdsgcn.network.WaterNetwork` or a batched graph).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from ._kernels import HW_EXPONENT, propagate_heads_kernel

DEFAULT_ZETA = 1e-8


class FixpointError(RuntimeError):
    pass


def edge_losses(graph, q_hat):
    """``w_e = ReLU(-r_e sgn(q_e)|q_e|^x)``: head drop carried by inflow edges."""
    q_hat = np.asarray(q_hat, dtype=np.float64)
    return np.maximum(-graph.resistance * np.sign(q_hat) * np.abs(q_hat) ** HW_EXPONENT, 0.0)


def floor_constant(graph, q_hat, bound=None):
    """Initial head for non-reservoir nodes: ``min h* - bound * max w``.

    ``bound`` defaults to ``n_nodes``, an upper bound on the longest simple
    path from a reservoir.
    """
    if not np.any(graph.reservoir_mask):
        raise FixpointError("floor constant needs at least one reservoir")
    bound = graph.n_nodes if bound is None else bound
    w = edge_losses(graph, q_hat)
    w_max = float(w.max()) if w.size else 0.0
    return float(np.min(graph.reservoir_head[graph.reservoir_mask])) - bound * w_max


@dataclass
class FixpointInput:
    initial_heads: np.ndarray
    q_hat: np.ndarray
    resistance: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    pinned: np.ndarray
    zeta: float = DEFAULT_ZETA

    @classmethod
    def build(cls, graph, q_hat, zeta=DEFAULT_ZETA):
        q_hat = np.asarray(q_hat, dtype=np.float64)
        if q_hat.shape != (graph.src.shape[0],):
            raise ValueError(f"q_hat must have one entry per directed edge ({graph.src.shape[0]}), got {q_hat.shape}")
        c = floor_constant(graph, q_hat)
        pinned = np.asarray(graph.reservoir_mask, dtype=bool)
        h0 = np.where(pinned, np.nan_to_num(graph.reservoir_head, nan=0.0), c)
        return cls(h0, q_hat, np.asarray(graph.resistance), graph.src, graph.dst, pinned, zeta)


@dataclass
class FixpointTrace:
    """``iterations`` is the number of sweeps that changed a head (J)."""

    iterations: int
    converged: bool
    snapshots: list = field(default_factory=list)


def propagate_heads(inp: FixpointInput, record: bool = False, max_iter=None):
    """Run the max-plus sweeps to their fixed point; returns ``(heads, trace)``.

    With ``record=True`` the head vector after every sweep is kept in
    ``trace.snapshots`` (``snapshots[0]`` is the initial vector).
    """
    n = inp.initial_heads.shape[0]
    max_iter = n if max_iter is None else max_iter
    w = np.maximum(-inp.resistance * np.sign(inp.q_hat) * np.abs(inp.q_hat) ** HW_EXPONENT, 0.0)
    if not record:
        h, j, ok = propagate_heads_kernel(
            np.ascontiguousarray(inp.initial_heads, dtype=np.float64),
            np.ascontiguousarray(inp.src),
            np.ascontiguousarray(inp.dst),
            w,
            np.ascontiguousarray(inp.pinned),
            max_iter,
        )
        trace = FixpointTrace(int(j), bool(ok))
    else:
        h = inp.initial_heads.astype(np.float64).copy()
        snaps = [h.copy()]
        ok, j = False, 0
        for j in range(max_iter + 1):
            agg = np.full(n, -np.inf)
            np.maximum.at(agg, inp.src, h[inp.dst] - w)
            new = np.where(inp.pinned, h, np.maximum(h, agg))
            if np.array_equal(new, h):
                ok = True
                break
            h = new
            snaps.append(h.copy())
        trace = FixpointTrace(j, ok, snaps)
    if not trace.converged:
        raise FixpointError(f"head propagation did not settle within {max_iter} sweeps")
    return h, trace


def reconstruct_flows_demands(graph, heads, zeta=DEFAULT_ZETA):
    """Flows ``sgn(dh)(|dh|/r)^(1/x) + zeta`` per directed edge and demands ``-sum q``."""
    heads = np.asarray(heads, dtype=np.float64)
    dh = heads[graph.src] - heads[graph.dst]
    q = np.sign(dh) * (np.abs(dh) * (1.0 / graph.resistance)) ** (1.0 / HW_EXPONENT) + zeta
    d = -np.bincount(graph.src, weights=q, minlength=graph.n_nodes)
    return q, d


def fixpoint_apply(graph, q_hat, zeta=DEFAULT_ZETA):
    """Full parameter-free step: ``q_hat -> (heads, demands, flows)``."""
    heads, _ = propagate_heads(FixpointInput.build(graph, q_hat, zeta))
    q, d = reconstruct_flows_demands(graph, heads, zeta)
    return heads, d, q


# --------------------------------------------------------------------------
# the same computation recorded on an autodiff tape


def fixpoint_apply_tape(graph, q_hat: ad.Var, zeta=DEFAULT_ZETA, max_iter=None):
    """Differentiable :func:`fixpoint_apply`; sweeps are unrolled on the tape.

    Returns ``(heads, demands, flows, sweeps)`` with the first three as Vars.
    The floor constant is treated as a constant.
    """
    tape = q_hat.tape
    n = graph.n_nodes
    max_iter = n if max_iter is None else max_iter
    r = np.asarray(graph.resistance)
    pinned = np.asarray(graph.reservoir_mask, dtype=bool)
    c = floor_constant(graph, q_hat.value)
    h = tape.const(np.where(pinned, np.nan_to_num(graph.reservoir_head, nan=0.0), c))
    w = ad.relu(ad.neg(ad.signed_power(q_hat, HW_EXPONENT) * r))
    for j in range(max_iter + 1):
        msg = ad.gather(h, graph.dst) - w
        agg = ad.mask_fill(ad.segment_max(msg, graph.src, n), pinned, -np.inf)
        new = ad.maximum(h, agg)
        if np.array_equal(new.value, h.value):
            break
        h = new
    else:
        raise FixpointError(f"head propagation did not settle within {max_iter} sweeps")
    dh = ad.gather(h, graph.src) - ad.gather(h, graph.dst)
    q = ad.signed_power(dh * (1.0 / r), 1.0 / HW_EXPONENT) + zeta
    d = ad.neg(ad.segment_sum(q, graph.src, n))
    return h, d, q, j
