"""Small generated networks for tests, probes and demos."""
from __future__ import annotations

import numpy as np

from .network import PipeAttr, WaterNetwork


def _attr(rng):
    return PipeAttr(
        length=float(rng.uniform(50.0, 1500.0)),
        diameter=float(rng.uniform(0.1, 1.0)),
        roughness=float(rng.uniform(90.0, 140.0)),
    )


def random_network(n_nodes: int, extra_pipes: int, seed: int, n_reservoirs: int = 1, head=100.0, demand_scale=0.05):
    """Random spanning tree plus ``extra_pipes`` chords; node 0.. are reservoirs.

    Consumer base demands are ``|N(0, demand_scale)|`` m^3/s.
    """
    if n_nodes < 2 or not (1 <= n_reservoirs < n_nodes):
        raise ValueError("need at least 2 nodes and 1..n_nodes-1 reservoirs")
    rng = np.random.default_rng(seed)
    ids = [f"n{i}" for i in range(n_nodes)]
    edges = set()
    for v in range(1, n_nodes):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    max_pipes = n_nodes * (n_nodes - 1) // 2
    target = min(len(edges) + extra_pipes, max_pipes)
    while len(edges) < target:
        a, b = sorted(int(x) for x in rng.choice(n_nodes, size=2, replace=False))
        edges.add((a, b))
    pipes = [(f"p{k}", ids[a], ids[b], _attr(rng)) for k, (a, b) in enumerate(sorted(edges))]
    res = {ids[i]: float(head - 5.0 * i) for i in range(n_reservoirs)}
    demand = np.abs(rng.normal(0.0, demand_scale, size=n_nodes))
    return WaterNetwork.from_pipes(ids, pipes, res, base_demand=demand, check=True)


def random_tree(n_nodes: int, seed: int, head=100.0):
    return random_network(n_nodes, 0, seed, head=head)


def path_network(n_nodes: int, r=1.0, head=100.0):
    """Reservoir ``n0`` feeding a chain; every pipe has resistance ``r``."""
    pipes = [(f"p{i}", f"n{i}", f"n{i + 1}", _unit_pipe(r)) for i in range(n_nodes - 1)]
    return WaterNetwork.from_pipes([f"n{i}" for i in range(n_nodes)], pipes, {"n0": head})


def _unit_pipe(r):
    """A pipe whose resistance is ``r`` (unit diameter and roughness)."""
    return PipeAttr(length=r / 10.667, diameter=1.0, roughness=1.0)


def triangle_network(r=(1.0, 2.0, 3.0), head=100.0):
    """Reservoir ``R`` and consumers ``A``, ``B`` joined pairwise."""
    pipes = [
        ("p0", "R", "A", _unit_pipe(r[0])),
        ("p1", "R", "B", _unit_pipe(r[1])),
        ("p2", "A", "B", _unit_pipe(r[2])),
    ]
    return WaterNetwork.from_pipes(["R", "A", "B"], pipes, {"R": head}, check=False)
