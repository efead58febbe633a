"""Demand/diameter scenario generation and the WDSD dataset container.

A scenario is a time series of nodal demands sampled every 30 minutes plus
one multiplicative diameter perturbation per pipe. Networks that carry
demand patterns get ``base * pattern(t) * (1 + noise)``; networks without
them get a synthetic per-node base profile drawn once from ``|N(0, 1)|``
(in m^3/h) with additive per-step noise.

Container layout (all little-endian)::

    b"WDSD" | u32 version | 32-byte network fingerprint
    u64 n_scenarios | u64 n_nodes | u64 n_pipes | f64 sampling minutes
    per scenario: u64 seed | u64 rows | u64 cols | f64[rows*cols] demands
                  | u64 n_pipes | f64[n_pipes] multipliers
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .network import WaterNetwork

SAMPLES_PER_DAY = 48
SAMPLING_MINUTES = 30.0
DEMAND_NOISE = 0.1
DIAMETER_NOISE = 1.0 / 30.0
MIN_DIAMETER_MULTIPLIER = 0.5
PATTERN_STEP_MINUTES = 60.0
SYNTHETIC_UNIT = 1.0 / 3600.0  # synthetic draws are in m^3/h, stored in m^3/s

DATASET_MAGIC = b"WDSD"
DATASET_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class Scenario:
    seed: int
    demand_series: np.ndarray  # time x nodes
    diameter_multipliers: np.ndarray  # one per pipe

    def network(self, base: WaterNetwork) -> WaterNetwork:
        return base.with_diameter_multipliers(self.diameter_multipliers)


@dataclass
class ScenarioSet:
    base: WaterNetwork
    scenarios: list = field(default_factory=list)
    sampling_minutes: float = SAMPLING_MINUTES

    def __len__(self):
        return len(self.scenarios)

    @property
    def n_samples(self) -> int:
        return sum(s.demand_series.shape[0] for s in self.scenarios)

    def split(self, part: str) -> "ScenarioSet":
        """Restrict every scenario to its train/val/test time window."""
        parts = {"train": 0, "val": 1, "test": 2, "all": None}
        if part not in parts:
            raise ValueError(f"unknown split {part!r}")
        if parts[part] is None:
            return self
        out = []
        for s in self.scenarios:
            bounds = split_bounds(s.demand_series.shape[0])
            lo, hi = bounds[parts[part]], bounds[parts[part] + 1]
            out.append(Scenario(s.seed, s.demand_series[lo:hi], s.diameter_multipliers))
        return ScenarioSet(self.base, out, self.sampling_minutes)

    def samples(self):
        """``(demands, resistances)`` stacked over all rows of all scenarios."""
        demands, res = [], []
        for s in self.scenarios:
            r = s.network(self.base).resistance
            demands.append(s.demand_series)
            res.append(np.broadcast_to(r, (s.demand_series.shape[0], r.size)))
        if not demands:
            return np.zeros((0, self.base.n_nodes)), np.zeros((0, self.base.n_edges))
        return np.vstack(demands), np.vstack(res)

    def equals(self, other: "ScenarioSet") -> bool:
        if len(self) != len(other) or self.sampling_minutes != other.sampling_minutes:
            return False
        return all(
            a.seed == b.seed
            and np.array_equal(a.demand_series, b.demand_series)
            and np.array_equal(a.diameter_multipliers, b.diameter_multipliers)
            for a, b in zip(self.scenarios, other.scenarios)
        )


def split_bounds(n_steps: int):
    """``(0, train_end, val_end, n_steps)`` for a 60/20/20 split by time index."""
    train_end = int(np.floor(0.6 * n_steps))
    val_end = train_end + int(np.floor(0.2 * n_steps))
    return 0, train_end, val_end, n_steps


def _pattern_matrix(net: WaterNetwork, n_steps: int, minutes: float):
    """Multiplier per (time step, node); nodes without a pattern get 1."""
    t_idx = np.floor(np.arange(n_steps) * minutes / PATTERN_STEP_MINUTES).astype(np.int64)
    mult = np.ones((n_steps, net.n_nodes))
    for v, pid in enumerate(net.demand_pattern):
        if pid is not None and pid in net.patterns:
            values = np.asarray(net.patterns[pid], dtype=np.float64)
            mult[:, v] = values[t_idx % values.size]
    return mult


def has_patterns(net: WaterNetwork) -> bool:
    return bool(np.any(net.base_demand[net.consumers] > 0))


def scenario_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream per scenario, regardless of generation order."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(index)])


def generate_scenario(net: WaterNetwork, index: int, days: int, seed: int) -> Scenario:
    rng = np.random.default_rng(scenario_seed(seed, index))
    n_steps = days * SAMPLES_PER_DAY
    consumer = ~net.reservoir_mask
    if has_patterns(net):
        base = net.base_demand[None, :] * _pattern_matrix(net, n_steps, SAMPLING_MINUTES)
        noise = rng.normal(0.0, DEMAND_NOISE, size=base.shape)
        demands = np.maximum(base * (1.0 + noise), 0.0)
    else:
        profile = np.abs(rng.normal(0.0, 1.0, size=net.n_nodes))
        noise = rng.normal(0.0, DEMAND_NOISE, size=(n_steps, net.n_nodes))
        demands = np.maximum(profile[None, :] + noise, 0.0) * SYNTHETIC_UNIT
    demands[:, ~consumer] = 0.0
    mult = np.maximum(1.0 + rng.normal(0.0, DIAMETER_NOISE, size=net.n_pipes), MIN_DIAMETER_MULTIPLIER)
    return Scenario(int(index), demands, mult)


def generate_scenarios(net: WaterNetwork, n_scenarios: int, days: int, seed: int, first_index: int = 0) -> ScenarioSet:
    """``n_scenarios`` scenarios of ``days * 48`` samples each.

    ``first_index`` offsets the scenario indices so that disjoint index
    ranges under one seed give independent train and evaluation sets.
    """
    if n_scenarios < 1 or days < 1:
        raise ValueError("n_scenarios and days must be >= 1")
    scen = [generate_scenario(net, first_index + i, days, seed) for i in range(n_scenarios)]
    return ScenarioSet(net, scen, SAMPLING_MINUTES)


def with_diameter_noise(ds: ScenarioSet, sigma: float, seed: int) -> ScenarioSet:
    """Same demands, fresh multipliers ``max(1 + N(0, sigma), 0.5)`` per scenario."""
    out = []
    for s in ds.scenarios:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, s.seed, 1]))
        mult = np.maximum(1.0 + rng.normal(0.0, sigma, size=ds.base.n_pipes), MIN_DIAMETER_MULTIPLIER)
        out.append(Scenario(s.seed, s.demand_series, mult))
    return ScenarioSet(ds.base, out, ds.sampling_minutes)


# --------------------------------------------------------------------------
# WDSD container


def _pack_matrix(buf, mat):
    mat = np.ascontiguousarray(mat, dtype="<f8")
    rows, cols = mat.shape if mat.ndim == 2 else (mat.shape[0], 1)
    buf.write(struct.pack("<QQ", rows, cols))
    buf.write(mat.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetError(f"file truncated while reading {what} (offset {self.pos}, need {n} bytes)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def matrix(self, what: str) -> np.ndarray:
        rows, cols = self.unpack("<QQ", what + " dims")
        raw = self.take(8 * rows * cols, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)


def dataset_bytes(ds: ScenarioSet) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", DATASET_VERSION))
    buf.write(ds.base.fingerprint())
    buf.write(struct.pack("<QQQd", len(ds), ds.base.n_nodes, ds.base.n_pipes, ds.sampling_minutes))
    for s in ds.scenarios:
        buf.write(struct.pack("<Q", s.seed))
        _pack_matrix(buf, s.demand_series)
        buf.write(struct.pack("<Q", s.diameter_multipliers.size))
        buf.write(np.ascontiguousarray(s.diameter_multipliers, dtype="<f8").tobytes())
    return buf.getvalue()


def dataset_from_bytes(data: bytes, net: WaterNetwork) -> ScenarioSet:
    rd = _Reader(data)
    magic = rd.take(4, "magic")
    if magic != DATASET_MAGIC:
        raise DatasetError(f"not a dataset file (magic {magic!r})")
    (version,) = rd.unpack("<I", "version")
    if version != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {version} (expected {DATASET_VERSION})")
    digest = rd.take(32, "network hash")
    if digest != net.fingerprint():
        raise DatasetError("network hash mismatch: dataset was generated for a different network")
    n_scen, n_nodes, n_pipes, minutes = rd.unpack("<QQQd", "header")
    if n_nodes != net.n_nodes or n_pipes != net.n_pipes:
        raise DatasetError(f"dataset dims ({n_nodes} nodes, {n_pipes} pipes) do not match the network")
    scen = []
    for k in range(n_scen):
        (seed,) = rd.unpack("<Q", f"scenario {k} seed")
        demands = rd.matrix(f"scenario {k} demands")
        if demands.shape[1] != n_nodes:
            raise DatasetError(f"scenario {k}: {demands.shape[1]} demand columns, expected {n_nodes}")
        (m,) = rd.unpack("<Q", f"scenario {k} multiplier count")
        if m != n_pipes:
            raise DatasetError(f"scenario {k}: {m} multipliers, expected {n_pipes}")
        mult = np.frombuffer(rd.take(8 * m, f"scenario {k} multipliers"), dtype="<f8").astype(np.float64)
        scen.append(Scenario(int(seed), demands, mult))
    if rd.pos != len(data):
        raise DatasetError(f"{len(data) - rd.pos} trailing bytes after dataset")
    return ScenarioSet(net, scen, minutes)


def save_dataset(path, ds: ScenarioSet):
    with open(path, "wb") as fh:
        fh.write(dataset_bytes(ds))


def load_dataset(path, net: WaterNetwork) -> ScenarioSet:
    with open(path, "rb") as fh:
        return dataset_from_bytes(fh.read(), net)
