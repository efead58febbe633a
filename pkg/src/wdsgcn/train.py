"""Training loop: K-fold emulator iteration, three-term L1 loss, Adam.

Each epoch draws one K uniformly from ``[k_min, k_max]``, shuffles the
training rows and walks them in batches. Gradients flow through the final
iteration only unless ``grad_mode="full"``.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .fixpoint import DEFAULT_ZETA
from .gcn import DEFAULT_LATENT, DEFAULT_LAYERS, GraphBatch, ModelParams, emulate
from .network import WaterNetwork

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; ``sample`` holds the offending rows."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample or {}


@dataclass
class TrainConfig:
    epochs: int = 3000
    lr: float = 1e-4
    scheduler_step: int = 300
    scheduler_decay: float = 0.75
    k_min: int = 10
    k_max: int = 15
    eval_iterations: int = 20
    rho: float = 0.1
    delta: float = 0.1
    batch_size: int = 16
    grad_clip_norm: float = 1.0
    seed: int = 0
    layers: int = DEFAULT_LAYERS
    latent: int = DEFAULT_LATENT
    grad_mode: str = "last"
    zeta: float = DEFAULT_ZETA

    def __post_init__(self):
        if not (1 <= self.k_min <= self.k_max <= 64):
            raise ValueError(f"K range [{self.k_min}, {self.k_max}] must lie within [1, 64]")
        if not (0 < self.rho < 1 and 0 < self.delta < 1):
            raise ValueError("rho and delta must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.grad_clip_norm <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1, lr > 0 and grad_clip_norm > 0 are required")
        if self.scheduler_step < 1 or not (0 < self.scheduler_decay <= 1):
            raise ValueError("scheduler_step >= 1 and scheduler_decay in (0, 1] are required")
        if self.grad_mode not in ("last", "full"):
            raise ValueError(f"grad_mode must be 'last' or 'full', got {self.grad_mode!r}")

    def as_dict(self) -> dict:
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: ``lr * decay ** (epoch // step)``."""
    return cfg.lr * cfg.scheduler_decay ** (epoch // cfg.scheduler_step)


class Adam:
    def __init__(self, shapes: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, tensors: dict, grads: dict, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the norm before clipping."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def loss_terms(out, graph: GraphBatch, demands: np.ndarray, rho: float, delta: float):
    """``L1(d*, d_hat) + rho L1(d*, d_tilde) + delta L1(q_hat, q_tilde)`` on consumers."""
    cons = graph.consumer_index
    target = demands[cons]
    l_hat = ad.mean_abs(ad.gather(out.d_hat, cons) - target)
    l_tilde = ad.mean_abs(ad.gather(out.d_tilde, cons) - target)
    l_flow = ad.mean_abs(out.q_hat - out.q_tilde)
    return l_hat + rho * l_tilde + delta * l_flow


def batch_loss(params: ModelParams, graph, demands, iterations, cfg: TrainConfig, tape=None, leaves=None):
    tape = ad.Tape() if tape is None else tape
    leaves = params.on_tape(tape) if leaves is None else leaves
    out = emulate(params, graph, demands, iterations, tape=tape, grad=cfg.grad_mode, zeta=cfg.zeta, leaves=leaves)
    return loss_terms(out, graph, demands, cfg.rho, cfg.delta), tape


def train_step(params: ModelParams, opt: Adam, graph, demands, iterations, cfg: TrainConfig, lr: float):
    """One optimizer update on one batch; returns ``(loss, grad_norm)``."""
    tape = ad.Tape()
    leaves = params.on_tape(tape)
    loss, _ = batch_loss(params, graph, demands, iterations, cfg, tape=tape, leaves=leaves)
    value = float(loss.value)
    grads = tape.backward(loss)
    finite = math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads.values())
    if not finite:
        raise TrainingDiverged(f"non-finite loss or gradient (loss={value})", {"demands": demands.copy()})
    norm = clip_by_global_norm(grads, cfg.grad_clip_norm)
    opt.step(params.tensors, grads, lr)
    return value, norm


@dataclass
class TrainResult:
    params: ModelParams
    history: list = field(default_factory=list)  # (epoch, loss, lr, K)
    seconds: float = 0.0


def train(net: WaterNetwork, demands, resistances, cfg: TrainConfig, params=None, curve_path=None, progress=None):
    """Fit the emulator on ``demands`` (rows x nodes) with per-row ``resistances`` (rows x edges).

    ``progress(epoch, loss, lr, K)`` is called after every epoch. When
    ``curve_path`` is given the loss curve is written there as CSV.
    """
    demands = np.asarray(demands, dtype=np.float64)
    resistances = np.asarray(resistances, dtype=np.float64)
    if demands.ndim != 2 or demands.shape[1] != net.n_nodes or resistances.shape != (demands.shape[0], net.n_edges):
        raise ValueError("demands must be rows x nodes and resistances rows x edges")
    if demands.shape[0] == 0:
        raise ValueError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.init(cfg.layers, cfg.latent, seed=cfg.seed) if params is None else params.copy()
    params.check()
    opt = Adam({k: v.shape for k, v in params.tensors.items()})
    history = []
    fh = open(curve_path, "w", newline="") if curve_path else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(["epoch", "loss", "lr", "K"])
    t0 = time.perf_counter()
    try:
        for epoch in range(cfg.epochs):
            k = int(rng.integers(cfg.k_min, cfg.k_max + 1))
            lr = learning_rate(cfg, epoch)
            order = rng.permutation(demands.shape[0])
            total, count = 0.0, 0
            for start in range(0, order.size, cfg.batch_size):
                rows = order[start : start + cfg.batch_size]
                graph = GraphBatch.stack(net, resistances[rows])
                flat = demands[rows].ravel()
                try:
                    value, _ = train_step(params, opt, graph, flat, k, cfg, lr)
                except TrainingDiverged as exc:
                    exc.sample.update({"epoch": epoch, "rows": rows.tolist(), "K": k})
                    log.error("training diverged at epoch %d, rows %s", epoch, rows.tolist())
                    raise
                total += value * rows.size
                count += rows.size
            mean = total / count
            history.append((epoch, mean, lr, k))
            if writer:
                writer.writerow([epoch, repr(mean), repr(lr), k])
                fh.flush()
            if progress:
                progress(epoch, mean, lr, k)
    finally:
        if fh:
            fh.close()
    return TrainResult(params, history, time.perf_counter() - t0)
