"""Learnable local flow estimator and the iterated emulator around it.

The estimator embeds node features ``(d1, d2)`` and edge features
``(q1, q2)``, runs ``layers`` rounds of edge messages with max aggregation
at the edge's source node, and adds a per-edge correction to ``q1``. All
maps are bias-free; every MLP is ``Linear -> SeLU -> Linear`` and SeLU is
applied to the input of each map.

Samples are batched as one block-diagonal graph (:class:`GraphBatch`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._kernels import HW_EXPONENT
from .fixpoint import DEFAULT_ZETA, fixpoint_apply_tape
from .network import WaterNetwork

DEFAULT_LAYERS = 5
DEFAULT_LATENT = 128


# --------------------------------------------------------------------------
# parameters


def parameter_shapes(layers: int, latent: int) -> dict:
    m = latent
    shapes = {"α.W": (2, m), "β.W": (2, m)}
    for i in range(layers):
        shapes[f"γ.{i}.0.W"] = (3 * m, m)
        shapes[f"γ.{i}.1.W"] = (m, m)
        shapes[f"η.{i}.0.W"] = (m, m)
        shapes[f"η.{i}.1.W"] = (m, m)
    shapes["λ.0.W"] = (3 * m, m)
    shapes["λ.1.W"] = (m, 1)
    return shapes


@dataclass
class ModelParams:
    layers: int
    latent: int
    tensors: dict

    @classmethod
    def init(cls, layers=DEFAULT_LAYERS, latent=DEFAULT_LATENT, seed=0):
        """LeCun-uniform (fan-in) weights, the usual pairing with SeLU."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in parameter_shapes(layers, latent).items():
            bound = np.sqrt(3.0 / shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(layers, latent, tensors)

    @classmethod
    def zeros(cls, layers=DEFAULT_LAYERS, latent=DEFAULT_LATENT):
        return cls(layers, latent, {k: np.zeros(s) for k, s in parameter_shapes(layers, latent).items()})

    def copy(self):
        return ModelParams(self.layers, self.latent, {k: v.copy() for k, v in self.tensors.items()})

    def check(self):
        expected = parameter_shapes(self.layers, self.latent)
        if set(expected) != set(self.tensors):
            raise ValueError(f"parameter names differ: {sorted(set(expected) ^ set(self.tensors))}")
        for k, s in expected.items():
            if self.tensors[k].shape != s:
                raise ValueError(f"{k} has shape {self.tensors[k].shape}, expected {s}")

    def on_tape(self, tape: ad.Tape) -> dict:
        return {k: tape.leaf(v, name=k) for k, v in self.tensors.items()}

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


# --------------------------------------------------------------------------
# batched graph


@dataclass
class GraphBatch:
    """``n_graphs`` copies of one topology, each with its own resistances."""

    n_graphs: int
    nodes_per_graph: int
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    resistance: np.ndarray
    reservoir_mask: np.ndarray
    reservoir_head: np.ndarray
    canonical_source: np.ndarray  # edge whose value each edge copies
    canonical_sign: np.ndarray  # +1 on canonical edges, -1 on partners
    consumer_index: np.ndarray

    @classmethod
    def stack(cls, net: WaterNetwork, resistances=None):
        res = np.atleast_2d(net.resistance if resistances is None else resistances).astype(np.float64)
        if res.shape[1] != net.n_edges:
            raise ValueError(f"resistances need {net.n_edges} columns, got {res.shape[1]}")
        b, n, e = res.shape[0], net.n_nodes, net.n_edges
        node_off = (np.arange(b) * n)[:, None]
        edge_off = (np.arange(b) * e)[:, None]
        canon = net.canonical_edges
        source = np.empty(e, dtype=np.int64)
        sign = np.empty(e)
        source[canon] = canon
        source[canon ^ 1] = canon
        sign[canon] = 1.0
        sign[canon ^ 1] = -1.0
        return cls(
            n_graphs=b,
            nodes_per_graph=n,
            n_nodes=b * n,
            src=(net.src[None, :] + node_off).ravel(),
            dst=(net.dst[None, :] + node_off).ravel(),
            resistance=res.ravel(),
            reservoir_mask=np.tile(net.reservoir_mask, b),
            reservoir_head=np.tile(net.reservoir_head, b),
            canonical_source=(source[None, :] + edge_off).ravel(),
            canonical_sign=np.tile(sign, b),
            consumer_index=(net.consumers[None, :] + node_off).ravel(),
        )

    @property
    def n_edges(self):
        return self.src.shape[0]


# --------------------------------------------------------------------------
# model pieces


def init_features(graph, demands):
    """Initial heads, node features ``D`` (n x 2) and edge features ``Q`` (e x 2).

    Non-reservoir heads start at 0; reservoir demand rows are 0; both flow
    columns come from the head differences through the Hazen-Williams law.
    """
    demands = np.asarray(demands, dtype=np.float64).ravel()
    if demands.shape != (graph.n_nodes,):
        raise ValueError(f"expected {graph.n_nodes} demands, got {demands.shape}")
    mask = np.asarray(graph.reservoir_mask, dtype=bool)
    h0 = np.where(mask, np.nan_to_num(graph.reservoir_head, nan=0.0), 0.0)
    d = np.where(mask, 0.0, demands)
    dh = h0[graph.src] - h0[graph.dst]
    q = np.sign(dh) * (np.abs(dh) * (1.0 / graph.resistance)) ** (1.0 / HW_EXPONENT)
    return h0, np.column_stack([d, d]), np.column_stack([q, q])


def _mlp(x, w0, w1):
    return ad.selu(ad.selu(x) @ w0) @ w1


def _edge_input_map(g, z, w, graph, latent):
    """``SeLU(g_u || g_v || z_e) @ w`` without materialising the concatenation."""
    sg = ad.selu(g)
    part_u = ad.gather(sg @ ad.slice_rows(w, 0, latent), graph.dst)
    part_v = ad.gather(sg @ ad.slice_rows(w, latent, 2 * latent), graph.src)
    return part_u + part_v + ad.selu(z) @ ad.slice_rows(w, 2 * latent, 3 * latent)


def forward(params: dict, graph, D, Q, layers: int, latent: int):
    """Flow estimate ``q_hat`` (one value per directed edge).

    ``params`` maps names to Vars; ``D``/``Q`` are Vars of shape (n, 2)/(e, 2).
    """
    if D.shape != (graph.n_nodes, 2) or Q.shape != (graph.n_edges, 2):
        raise ValueError(f"feature shapes {D.shape}, {Q.shape} do not match graph")
    g = ad.selu(D) @ params["α.W"]
    z = ad.selu(Q) @ params["β.W"]
    for i in range(layers):
        pre = _edge_input_map(g, z, params[f"γ.{i}.0.W"], graph, latent)
        m = ad.selu(pre) @ params[f"γ.{i}.1.W"]
        m_v = ad.segment_max(m, graph.src, graph.n_nodes)
        g = _mlp(m_v, params[f"η.{i}.0.W"], params[f"η.{i}.1.W"])
        z = m
    pre = _edge_input_map(g, z, params["λ.0.W"], graph, latent)
    out = ad.flatten(ad.selu(pre) @ params["λ.1.W"])
    return ad.flatten(ad.slice_cols(Q, 0, 1)) + out


def antisymmetrize(graph, q_hat):
    """Keep the canonical direction of each pipe and negate it on the partner."""
    if isinstance(q_hat, ad.Var):
        return ad.gather(q_hat, graph.canonical_source) * graph.canonical_sign
    return np.asarray(q_hat)[graph.canonical_source] * graph.canonical_sign


def demands_from_flows(graph, flows):
    """``d_v = -sum_u q_vu``."""
    if isinstance(flows, ad.Var):
        return ad.neg(ad.segment_sum(flows, graph.src, graph.n_nodes))
    return -np.bincount(graph.src, weights=flows, minlength=graph.n_nodes)


# --------------------------------------------------------------------------
# iterated emulator


@dataclass
class EmulatorOutput:
    q_hat: ad.Var  # antisymmetrised GCN flows
    d_hat: ad.Var  # demands implied by q_hat
    heads: ad.Var
    d_tilde: ad.Var
    q_tilde: ad.Var
    sweeps: list


def emulate(params: ModelParams, graph, demands, iterations: int, tape=None, grad="last", zeta=DEFAULT_ZETA, leaves=None):
    """Apply GCN + head propagation ``iterations`` times with feature rewiring.

    ``grad`` selects what is recorded on ``tape``: ``"last"`` (only the final
    iteration, earlier outputs enter as constants), ``"full"`` (every
    iteration) or ``"none"``. Returns the outputs of the last iteration.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if grad not in ("last", "full", "none"):
        raise ValueError(f"unknown grad mode {grad!r}")
    if tape is None or grad == "none":
        tape = ad.Tape(enabled=False)
    if leaves is None:
        leaves = params.on_tape(tape)
    detached_tape = ad.Tape(enabled=False)
    detached = {k: detached_tape.const(v) for k, v in params.tensors.items()}
    _, D0, Q0 = init_features(graph, demands)
    d_true = D0[:, 0]
    D, Q = D0, Q0
    sweeps = []
    out = None
    for k in range(iterations):
        recorded = grad == "full" or (grad == "last" and k == iterations - 1)
        t, p = (tape, leaves) if recorded else (detached_tape, detached)
        Dv = D if isinstance(D, ad.Var) and D.tape is t else t.const(_value(D))
        Qv = Q if isinstance(Q, ad.Var) and Q.tape is t else t.const(_value(Q))
        q_raw = forward(p, graph, Dv, Qv, params.layers, params.latent)
        q_hat = antisymmetrize(graph, q_raw)
        d_hat = demands_from_flows(graph, q_hat)
        heads, d_tilde, q_tilde, j = fixpoint_apply_tape(graph, q_hat, zeta)
        sweeps.append(j)
        out = EmulatorOutput(q_hat, d_hat, heads, d_tilde, q_tilde, sweeps)
        if grad == "full":
            D = ad.concat([t.const(d_true[:, None]), ad.column(d_hat)])
            Q = ad.concat([ad.column(q_hat), ad.column(q_tilde)])
        else:
            D = np.column_stack([d_true, d_hat.value])
            Q = np.column_stack([q_hat.value, q_tilde.value])
    return out


def _value(x):
    return x.value if isinstance(x, ad.Var) else x
