"""Water network graph model and Hazen-Williams hydraulics.

Every physical pipe is stored as two antiparallel directed edges: pipe ``p``
owns edges ``2p`` (from ``a`` to ``b``) and ``2p + 1`` (from ``b`` to ``a``).
Flows are signed per directed edge, positive meaning outflow from the edge's
source node. Units are metres for lengths/heads and m^3/s for flows.
"""
from __future__ import annotations

import hashlib
import warnings
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._kernels import HW_EXPONENT

HW_COEFFICIENT = 10.667
HW_DIAMETER_EXPONENT = 4.871


class NetworkError(ValueError):
    """Structural problem with a network (connectivity, dimensions, ...)."""


class NodeKind(Enum):
    RESERVOIR = "reservoir"
    CONSUMER = "consumer"


def resistance_coefficient(length, diameter, roughness):
    """Hazen-Williams resistance ``10.667 l d^-4.871 c^-1.852`` (SI units)."""
    for name, value in (("length", length), ("diameter", diameter), ("roughness", roughness)):
        if np.any(np.asarray(value) <= 0):
            raise ValueError(f"{name} must be positive, got {value!r}")
    return (
        HW_COEFFICIENT
        * np.asarray(length, dtype=np.float64)
        * np.asarray(diameter, dtype=np.float64) ** (-HW_DIAMETER_EXPONENT)
        * np.asarray(roughness, dtype=np.float64) ** (-HW_EXPONENT)
    )[()]


def headloss(r, q):
    """Head drop ``r sgn(q) |q|^1.852`` along a directed edge carrying ``q``."""
    q = np.asarray(q, dtype=np.float64)
    return (r * np.sign(q) * np.abs(q) ** HW_EXPONENT)[()]


def flow_from_headloss(r, dh):
    """Inverse of :func:`headloss`."""
    dh = np.asarray(dh, dtype=np.float64)
    return (np.sign(dh) * (np.abs(dh) / r) ** (1.0 / HW_EXPONENT))[()]


@dataclass(frozen=True)
class PipeAttr:
    length: float
    diameter: float
    roughness: float

    def __post_init__(self):
        for name in ("length", "diameter", "roughness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"pipe {name} must be positive, got {getattr(self, name)!r}")

    @property
    def resistance(self) -> float:
        return float(resistance_coefficient(self.length, self.diameter, self.roughness))


@dataclass(frozen=True, eq=False)
class WaterNetwork:
    """Immutable WDS topology with cached per-edge resistances.

    Construct with :meth:`from_pipes`; the raw constructor expects already
    doubled, consistent arrays.
    """

    node_ids: tuple
    kinds: tuple
    elevation: np.ndarray
    reservoir_head: np.ndarray  # NaN for consumers
    base_demand: np.ndarray  # m^3/s, 0 for reservoirs
    demand_pattern: tuple  # pattern id or None per node
    pipe_ids: tuple
    pipe_attrs: tuple
    src: np.ndarray
    dst: np.ndarray
    resistance: np.ndarray
    patterns: dict = field(default_factory=dict)

    @classmethod
    def from_pipes(
        cls,
        nodes,
        pipes,
        reservoir_heads,
        elevation=None,
        base_demand=None,
        demand_pattern=None,
        patterns=None,
        check=True,
    ):
        """Build a network.

        ``nodes`` is a sequence of node ids; ``pipes`` a sequence of
        ``(pipe_id, from_id, to_id, PipeAttr)``; ``reservoir_heads`` maps the
        reservoir ids to their fixed heads.
        """
        node_ids = tuple(nodes)
        index = {nid: i for i, nid in enumerate(node_ids)}
        if len(index) != len(node_ids):
            raise NetworkError("duplicate node id")
        n = len(node_ids)
        res_head = np.full(n, np.nan)
        for nid, head in reservoir_heads.items():
            if nid not in index:
                raise NetworkError(f"reservoir {nid!r} is not a node")
            res_head[index[nid]] = float(head)
        kinds = tuple(
            NodeKind.RESERVOIR if not np.isnan(res_head[i]) else NodeKind.CONSUMER for i in range(n)
        )
        pipe_ids, attrs, src, dst = [], [], [], []
        for pid, a, b, attr in pipes:
            for end in (a, b):
                if end not in index:
                    raise NetworkError(f"pipe {pid!r} references unknown node {end!r}")
            if a == b:
                raise NetworkError(f"pipe {pid!r} is a self-loop on {a!r}")
            pipe_ids.append(pid)
            attrs.append(attr)
            src += [index[a], index[b]]
            dst += [index[b], index[a]]
        if len(set(pipe_ids)) != len(pipe_ids):
            raise NetworkError("duplicate pipe id")
        r_pipe = np.array([p.resistance for p in attrs], dtype=np.float64)
        demand = np.zeros(n) if base_demand is None else np.asarray(base_demand, dtype=np.float64).copy()
        demand[~np.isnan(res_head)] = 0.0
        net = cls(
            node_ids=node_ids,
            kinds=kinds,
            elevation=np.zeros(n) if elevation is None else np.asarray(elevation, dtype=np.float64),
            reservoir_head=res_head,
            base_demand=demand,
            demand_pattern=tuple(demand_pattern) if demand_pattern is not None else (None,) * n,
            pipe_ids=tuple(pipe_ids),
            pipe_attrs=tuple(attrs),
            src=np.array(src, dtype=np.int64),
            dst=np.array(dst, dtype=np.int64),
            resistance=np.repeat(r_pipe, 2),
            patterns=dict(patterns or {}),
        )
        for arr in (net.elevation, net.reservoir_head, net.base_demand, net.src, net.dst, net.resistance):
            arr.setflags(write=False)
        if check:
            net.validate()
        return net

    # -- sizes -------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    @property
    def n_pipes(self) -> int:
        return len(self.pipe_ids)

    @property
    def pair(self) -> np.ndarray:
        """Index of the antiparallel partner of every directed edge."""
        return np.arange(self.n_edges) ^ 1

    @property
    def reservoir_mask(self) -> np.ndarray:
        return ~np.isnan(self.reservoir_head)

    @property
    def reservoirs(self) -> np.ndarray:
        return np.flatnonzero(self.reservoir_mask)

    @property
    def consumers(self) -> np.ndarray:
        return np.flatnonzero(~self.reservoir_mask)

    @property
    def canonical_edges(self) -> np.ndarray:
        """One edge per pipe: the direction with the smaller (from, to) index pair."""
        even = np.arange(0, self.n_edges, 2)
        keep_even = self.src[even] < self.dst[even]
        return np.where(keep_even, even, even + 1)

    def degree(self) -> np.ndarray:
        """Undirected degree (number of pipes) per node."""
        return np.bincount(self.src, minlength=self.n_nodes)

    def node_index(self, node_id) -> int:
        return self.node_ids.index(node_id)

    # -- structure ---------------------------------------------------------

    def validate(self):
        if not self.reservoir_mask.any():
            raise NetworkError("network has no reservoir")
        seen = self._bfs_depth(self.reservoirs)
        unreached = [self.node_ids[i] for i in np.flatnonzero(seen < 0)]
        if unreached:
            raise NetworkError(f"nodes not reachable from any reservoir: {unreached[:10]}")
        if self.n_edges <= self.n_nodes:
            warnings.warn(
                f"network has {self.n_edges} directed edges for {self.n_nodes} nodes; "
                "flows are then uniquely determined by mass balance",
                stacklevel=2,
            )

    def _adjacency(self):
        adj = [[] for _ in range(self.n_nodes)]
        for s, d in zip(self.src.tolist(), self.dst.tolist()):
            adj[s].append(d)
        return adj

    def _bfs_depth(self, sources) -> np.ndarray:
        adj = self._adjacency()
        depth = np.full(self.n_nodes, -1, dtype=np.int64)
        queue = deque()
        for s in np.atleast_1d(sources):
            depth[s] = 0
            queue.append(int(s))
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if depth[u] < 0:
                    depth[u] = depth[v] + 1
                    queue.append(u)
        return depth

    def reservoir_depth(self) -> np.ndarray:
        """Hop distance of every node to its nearest reservoir."""
        return self._bfs_depth(self.reservoirs)

    def with_diameter_multipliers(self, multipliers) -> "WaterNetwork":
        """Copy of the network with pipe diameters scaled per pipe."""
        multipliers = np.asarray(multipliers, dtype=np.float64)
        if multipliers.shape != (self.n_pipes,):
            raise NetworkError(f"expected {self.n_pipes} multipliers, got shape {multipliers.shape}")
        attrs = tuple(
            PipeAttr(a.length, a.diameter * m, a.roughness) for a, m in zip(self.pipe_attrs, multipliers)
        )
        r = np.repeat(np.array([a.resistance for a in attrs]), 2)
        r.setflags(write=False)
        return WaterNetwork(
            node_ids=self.node_ids,
            kinds=self.kinds,
            elevation=self.elevation,
            reservoir_head=self.reservoir_head,
            base_demand=self.base_demand,
            demand_pattern=self.demand_pattern,
            pipe_ids=self.pipe_ids,
            pipe_attrs=attrs,
            src=self.src,
            dst=self.dst,
            resistance=r,
            patterns=self.patterns,
        )

    def fingerprint(self) -> bytes:
        """32-byte SHA-256 digest of topology, pipe attributes and reservoirs."""
        h = hashlib.sha256()
        h.update(repr(self.node_ids).encode())
        h.update(repr(self.pipe_ids).encode())
        h.update(self.src.astype("<i8").tobytes())
        h.update(self.dst.astype("<i8").tobytes())
        attrs = np.array([[a.length, a.diameter, a.roughness] for a in self.pipe_attrs], dtype="<f8")
        h.update(attrs.tobytes())
        h.update(np.nan_to_num(self.reservoir_head, nan=-1.0).astype("<f8").tobytes())
        return h.digest()


def graph_diameter(net: WaterNetwork) -> int:
    """Longest shortest-path hop count on the undirected skeleton."""
    best = 0
    for v in range(net.n_nodes):
        depth = net._bfs_depth([v])
        if (depth < 0).any():
            raise NetworkError("graph_diameter needs a connected network")
        best = max(best, int(depth.max()))
    return best


@dataclass
class HydraulicState:
    """Heads and demands per node, flows per directed edge."""

    heads: np.ndarray
    demands: np.ndarray
    flows: np.ndarray
    physical: bool = False

    def check_shape(self, net: WaterNetwork):
        if self.heads.shape != (net.n_nodes,) or self.demands.shape != (net.n_nodes,):
            raise NetworkError(
                f"node vectors must have length {net.n_nodes}, "
                f"got heads {self.heads.shape}, demands {self.demands.shape}"
            )
        if self.flows.shape != (net.n_edges,):
            raise NetworkError(f"flow vector must have length {net.n_edges}, got {self.flows.shape}")

    def pressure(self, net: WaterNetwork) -> np.ndarray:
        return self.heads - net.elevation


def outflow_sum(net: WaterNetwork, flows) -> np.ndarray:
    """Per-node sum of outgoing directed-edge flows."""
    return np.bincount(net.src, weights=flows, minlength=net.n_nodes)


def node_imbalance(net: WaterNetwork, state: HydraulicState) -> np.ndarray:
    """Mass-balance residual ``sum_u q_vu + d_v`` per node (zero when balanced)."""
    state.check_shape(net)
    return outflow_sum(net, state.flows) + state.demands


def headloss_residual(net: WaterNetwork, state: HydraulicState) -> np.ndarray:
    """Per-edge residual of ``h_v - h_u = r sgn(q) |q|^x``."""
    state.check_shape(net)
    dh = state.heads[net.src] - state.heads[net.dst]
    return dh - headloss(net.resistance, state.flows)
