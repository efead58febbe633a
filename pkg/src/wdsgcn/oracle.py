"""Demand-driven steady-state solver used as ground truth.

Newton iteration on the unknown nodal heads. The mass-balance residual is
the gradient of the convex network content function

    E(h) = sum_pipes r^(-1/x) |dh|^(1+1/x) / (1+1/x) + sum_v d_v h_v,

so its Jacobian is a flow-derivative weighted graph Laplacian and a
backtracking line search on E (or on the residual norm) keeps the iteration
globally convergent.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ._kernels import HW_EXPONENT, hw_flow
from .network import HydraulicState, WaterNetwork, outflow_sum

DENSE_LIMIT = 400


class SolverError(RuntimeError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 200
    head_tolerance: float = 1e-8
    mass_tolerance: float = 1e-6
    regularization: float = 1e-10

    def __post_init__(self):
        if self.max_iterations <= 0 or self.head_tolerance <= 0 or self.mass_tolerance <= 0 or self.regularization <= 0:
            raise ValueError("solver settings must be positive")


def _content(r_pipe, dh, demand_free, h_free):
    p = 1.0 + 1.0 / HW_EXPONENT
    return float(np.sum(r_pipe ** (-1.0 / HW_EXPONENT) * np.abs(dh) ** p / p) + demand_free @ h_free)


def solve_steady_state(net: WaterNetwork, demands, cfg: SolverConfig = SolverConfig()) -> HydraulicState:
    """Heads and flows for consumer ``demands`` (length ``n_nodes``; reservoir entries ignored)."""
    demands = np.asarray(demands, dtype=np.float64)
    if demands.shape != (net.n_nodes,):
        raise ValueError(f"demand vector must have length {net.n_nodes}, got {demands.shape}")
    free = net.consumers
    fixed = net.reservoir_mask
    d_free = demands[free]
    if np.any(~np.isfinite(d_free)):
        raise ValueError("demands must be finite")
    if np.any(d_free < 0):
        bad = [net.node_ids[i] for i in free[d_free < 0]][:5]
        raise ValueError(f"negative consumer demand at {bad}")

    a = net.src[0::2]
    b = net.dst[0::2]
    r_pipe = net.resistance[0::2]
    n = net.n_nodes
    pos = np.full(n, -1, dtype=np.int64)
    pos[free] = np.arange(free.size)
    h = np.where(fixed, net.reservoir_head, np.nanmin(net.reservoir_head) - 1.0)
    reg = cfg.regularization

    def residual(heads):
        dh = heads[a] - heads[b]
        q, g = hw_flow(dh, r_pipe, reg)
        out = np.bincount(a, weights=q, minlength=n) - np.bincount(b, weights=q, minlength=n)
        return dh, q, g, out[free] + d_free

    dh, q, g, F = residual(h)
    res = np.max(np.abs(F)) if F.size else 0.0
    step_max = np.inf
    # Laplacian pattern restricted to free nodes
    pa, pb = pos[a], pos[b]
    both = (pa >= 0) & (pb >= 0)
    for it in range(1, cfg.max_iterations + 1):
        if res <= cfg.mass_tolerance and step_max <= cfg.head_tolerance:
            break
        if free.size == 0:
            break
        diag = np.bincount(pa[pa >= 0], weights=g[pa >= 0], minlength=free.size) + np.bincount(
            pb[pb >= 0], weights=g[pb >= 0], minlength=free.size
        )
        if free.size <= DENSE_LIMIT:
            J = np.diag(diag)
            np.add.at(J, (pa[both], pb[both]), -g[both])
            np.add.at(J, (pb[both], pa[both]), -g[both])
            try:
                delta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(J), -F)
            except np.linalg.LinAlgError:
                raise SolverError("singular Jacobian (component without reservoir?)", res, it) from None
        else:
            rows = np.r_[np.arange(free.size), pa[both], pb[both]]
            cols = np.r_[np.arange(free.size), pb[both], pa[both]]
            vals = np.r_[diag, -g[both], -g[both]]
            J = scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(free.size, free.size))
            delta = scipy.sparse.linalg.spsolve(J, -F)
            if not np.all(np.isfinite(delta)):
                raise SolverError("singular Jacobian (component without reservoir?)", res, it)

        e_old = _content(r_pipe, dh, d_free, h[free])
        slope = float(F @ delta)
        norm_old = float(np.linalg.norm(F))
        t = 1.0
        for _ in range(40):
            trial = h.copy()
            trial[free] += t * delta
            dh_t, q_t, g_t, F_t = residual(trial)
            if np.linalg.norm(F_t) < norm_old:
                break
            if _content(r_pipe, dh_t, d_free, trial[free]) <= e_old + 1e-4 * t * slope:
                break
            t *= 0.5
        h, dh, q, g, F = trial, dh_t, q_t, g_t, F_t
        res = np.max(np.abs(F))
        step_max = t * np.max(np.abs(delta))
    else:
        if not (res <= cfg.mass_tolerance and step_max <= cfg.head_tolerance):
            raise SolverError(
                f"no convergence after {cfg.max_iterations} iterations (max imbalance {res:.3e})",
                res,
                cfg.max_iterations,
            )

    flows = np.empty(net.n_edges)
    flows[0::2] = q
    flows[1::2] = -q
    full_demand = np.where(fixed, 0.0, demands)
    # reservoirs supply whatever leaves them
    full_demand[fixed] = -outflow_sum(net, flows)[fixed]
    return HydraulicState(heads=h, demands=full_demand, flows=flows, physical=True)


@dataclass
class BatchResult:
    states: list
    seconds: np.ndarray
    errors: dict = field(default_factory=dict)  # row -> message


def batch_solve(net: WaterNetwork, demand_series, cfg: SolverConfig = SolverConfig(), networks=None) -> BatchResult:
    """Solve each demand row independently, timing every solve.

    ``networks`` optionally gives a per-row network (e.g. perturbed
    diameters). Failed rows yield ``None`` and an entry in ``errors``.
    """
    demand_series = np.asarray(demand_series, dtype=np.float64).reshape(-1, net.n_nodes)
    states, seconds, errors = [], np.zeros(len(demand_series)), {}
    for i, row in enumerate(demand_series):
        row_net = net if networks is None else networks[i]
        t0 = time.perf_counter()
        try:
            states.append(solve_steady_state(row_net, row, cfg))
        except (ValueError, SolverError) as exc:
            states.append(None)
            errors[i] = str(exc)
        seconds[i] = time.perf_counter() - t0
    return BatchResult(states, seconds, errors)
