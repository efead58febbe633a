"""Evaluation metrics, oracle baselines, runtime benchmark and robustness probe."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .gcn import GraphBatch, ModelParams, emulate
from .fixpoint import DEFAULT_ZETA
from .oracle import SolverConfig, batch_solve
from .scenarios import ScenarioSet, with_diameter_noise

DEMAND_FLOOR = 1e-6 / 3600.0  # 1e-6 m^3/h in internal m^3/s
OUTLIER_FRACTION = 0.05


@dataclass
class EmulatorRun:
    """Per-sample emulator outputs stacked over rows."""

    d_hat: np.ndarray  # rows x nodes
    heads: np.ndarray  # rows x nodes
    q_tilde: np.ndarray  # rows x edges
    seconds: float


@dataclass
class OracleRun:
    heads: np.ndarray
    flows: np.ndarray
    seconds: np.ndarray  # per sample


def run_emulator(params: ModelParams, net, demands, resistances, iterations=20, batch_size=256, zeta=DEFAULT_ZETA):
    demands = np.asarray(demands, dtype=np.float64).reshape(-1, net.n_nodes)
    resistances = np.asarray(resistances, dtype=np.float64).reshape(-1, net.n_edges)
    n = demands.shape[0]
    d_hat = np.zeros((n, net.n_nodes))
    heads = np.zeros((n, net.n_nodes))
    q_tilde = np.zeros((n, net.n_edges))
    t0 = time.perf_counter()
    for start in range(0, n, batch_size):
        rows = slice(start, min(start + batch_size, n))
        graph = GraphBatch.stack(net, resistances[rows])
        out = emulate(params, graph, demands[rows].ravel(), iterations, grad="none", zeta=zeta)
        b = rows.stop - rows.start
        d_hat[rows] = out.d_hat.value.reshape(b, -1)
        heads[rows] = out.heads.value.reshape(b, -1)
        q_tilde[rows] = out.q_tilde.value.reshape(b, -1)
    return EmulatorRun(d_hat, heads, q_tilde, time.perf_counter() - t0)


def run_oracle(ds: ScenarioSet, cfg: SolverConfig = SolverConfig()) -> OracleRun:
    heads, flows, secs = [], [], []
    for s in ds.scenarios:
        res = batch_solve(ds.base, s.demand_series, cfg, networks=[s.network(ds.base)] * s.demand_series.shape[0])
        if res.errors:
            row, msg = next(iter(res.errors.items()))
            raise RuntimeError(f"oracle failed on scenario {s.seed} row {row}: {msg}")
        heads += [st.heads for st in res.states]
        flows += [st.flows for st in res.states]
        secs.append(res.seconds)
    if not heads:
        return OracleRun(np.zeros((0, ds.base.n_nodes)), np.zeros((0, ds.base.n_edges)), np.zeros(0))
    return OracleRun(np.array(heads), np.array(flows), np.concatenate(secs))


def relative_errors(truth, estimate, floor):
    """Per-row mean of ``|truth - estimate| / |truth|`` over entries with ``|truth| > floor``."""
    truth = np.asarray(truth, dtype=np.float64)
    keep = np.abs(truth) > floor
    rel = np.where(keep, np.abs(truth - estimate) / np.where(keep, np.abs(truth), 1.0), 0.0)
    counts = keep.sum(axis=1)
    return np.where(counts > 0, rel.sum(axis=1) / np.maximum(counts, 1), 0.0)


def conformity(net, heads, q_tilde, zeta=DEFAULT_ZETA) -> int:
    """Count of directed edges where ``sgn(h_v - h_u)`` differs from the sign of the reconstructed flow.

    The flow sign is taken relative to ``zeta`` because reconstruction adds it.
    """
    heads = np.atleast_2d(heads)
    q_tilde = np.atleast_2d(q_tilde)
    dh = heads[:, net.src] - heads[:, net.dst]
    flow_sign = np.sign(q_tilde - zeta)
    return int(np.count_nonzero(np.sign(dh) != flow_sign))


@dataclass
class Stat:
    mean: float
    std: float

    def __str__(self):
        return f"{100 * self.mean:.3f} ± {100 * self.std:.3f} %"


def _stat(values) -> Stat:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return Stat(0.0, 0.0)
    return Stat(float(values.mean()), float(values.std()))


@dataclass
class EvalReport:
    n_samples: int
    demand: Stat
    head: Stat
    flow: Stat
    conformity: int
    emulator_seconds_per_sample: float
    oracle_seconds_per_sample: float
    demand_trimmed: Stat
    head_trimmed: Stat
    flow_trimmed: Stat
    per_sample_demand: np.ndarray = field(repr=False, default=None)

    def rows(self):
        """Flat ``(metric, value)`` pairs for CSV/JSON output."""
        out = [("samples", self.n_samples), ("conformity", self.conformity)]
        for name in ("demand", "head", "flow", "demand_trimmed", "head_trimmed", "flow_trimmed"):
            s = getattr(self, name)
            out += [(f"{name}_mrae_mean", s.mean), (f"{name}_mrae_std", s.std)]
        out += [
            ("emulator_s_per_sample", self.emulator_seconds_per_sample),
            ("oracle_s_per_sample", self.oracle_seconds_per_sample),
        ]
        return out


def trimmed_mask(per_sample, fraction=OUTLIER_FRACTION):
    """Boolean mask dropping the worst ``fraction`` of samples by ``per_sample``."""
    n = per_sample.size
    drop = int(np.floor(fraction * n))
    keep = np.ones(n, dtype=bool)
    if drop:
        keep[np.argsort(per_sample, kind="stable")[n - drop :]] = False
    return keep


def evaluate(params: ModelParams, ds: ScenarioSet, oracle: OracleRun | None = None, iterations=20,
             batch_size=256, demand_floor=DEMAND_FLOOR, zeta=DEFAULT_ZETA) -> EvalReport:
    """Emulate every sample of ``ds`` for ``iterations`` steps and score it against truth and the oracle."""
    net = ds.base
    demands, resistances = ds.samples()
    oracle = run_oracle(ds) if oracle is None else oracle
    if oracle.heads.shape[0] != demands.shape[0]:
        raise ValueError(f"oracle has {oracle.heads.shape[0]} states for {demands.shape[0]} samples")
    emu = run_emulator(params, net, demands, resistances, iterations, batch_size, zeta)
    cons = net.consumers
    demand = relative_errors(demands[:, cons], emu.d_hat[:, cons], demand_floor)
    head = relative_errors(oracle.heads[:, cons], emu.heads[:, cons], 0.0)
    flow = relative_errors(oracle.flows, emu.q_tilde, demand_floor)
    keep = trimmed_mask(demand)
    n = demands.shape[0]
    return EvalReport(
        n_samples=n,
        demand=_stat(demand),
        head=_stat(head),
        flow=_stat(flow),
        conformity=conformity(net, emu.heads, emu.q_tilde, zeta),
        emulator_seconds_per_sample=emu.seconds / n if n else 0.0,
        oracle_seconds_per_sample=float(oracle.seconds.mean()) if n else 0.0,
        demand_trimmed=_stat(demand[keep]),
        head_trimmed=_stat(head[keep]),
        flow_trimmed=_stat(flow[keep]),
        per_sample_demand=demand,
    )


def benchmark(params: ModelParams, net, demands, resistances, sample_counts, iterations=20, batch_size=256,
              cfg: SolverConfig = SolverConfig(), csv_path=None):
    """Wall-clock of oracle vs emulator on the first ``n`` rows for each ``n`` in ``sample_counts``.

    Rows are reused cyclically when ``n`` exceeds the supplied data.
    Returns a list of ``(samples, oracle_s, emulator_s)``.
    """
    demands = np.asarray(demands, dtype=np.float64).reshape(-1, net.n_nodes)
    resistances = np.asarray(resistances, dtype=np.float64).reshape(-1, net.n_edges)
    rows = []
    for n in sample_counts:
        if n == 0:
            continue
        idx = np.arange(n) % demands.shape[0]
        nets = {}
        t0 = time.perf_counter()
        for i in idx:
            key = resistances[i].tobytes()
            if key not in nets:
                nets[key] = _network_with_resistance(net, resistances[i])
            res = batch_solve(net, demands[i : i + 1], cfg, networks=[nets[key]])
            if res.errors:
                raise RuntimeError(f"oracle failed on row {i}: {res.errors[0]}")
        oracle_s = time.perf_counter() - t0
        emu = run_emulator(params, net, demands[idx], resistances[idx], iterations, batch_size)
        rows.append((int(n), oracle_s, emu.seconds))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["samples", "oracle_s", "emulator_s"])
            w.writerows(rows)
    return rows


def _network_with_resistance(net, resistance):
    from dataclasses import replace

    r = np.array(resistance, dtype=np.float64)
    r.setflags(write=False)
    return replace(net, resistance=r)


def robustness_probe(params: ModelParams, ds: ScenarioSet, sigmas=(0.0, 0.02, 0.04, 0.06, 0.08, 0.10),
                     iterations=20, seed=0, csv_path=None, batch_size=256):
    """Demand MRAE as a function of the diameter-noise level; returns ``[(sigma, mean, std)]``.

    The same standard-normal draws are scaled by every ``sigma``, so the
    perturbations are nested across levels.
    """
    rows = []
    for sigma in sigmas:
        noisy = with_diameter_noise(ds, sigma, seed)
        demands, resistances = noisy.samples()
        emu = run_emulator(params, ds.base, demands, resistances, iterations, batch_size)
        cons = ds.base.consumers
        err = relative_errors(demands[:, cons], emu.d_hat[:, cons], DEMAND_FLOOR)
        rows.append((float(sigma), float(err.mean()), float(err.std())))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "demand_mrae_mean", "demand_mrae_std"])
            w.writerows(rows)
    return rows
