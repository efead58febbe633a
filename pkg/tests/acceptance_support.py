"""Desk-scale Hanoi run shared by the acceptance suite.

Training takes hours on one CPU core, so the checkpoint is cached under a
key derived from the training config and the training data. Build the cache
ahead of a test run with::

    python tests/acceptance_support.py

The cache directory defaults to ``.acceptance_cache`` in the repository root
and can be moved with ``WDSGCN_ACCEPTANCE_CACHE``.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
HANOI = ROOT / "src" / "wdsgcn" / "data" / "hanoi.inp"

TRAIN_SCENARIOS, EVAL_SCENARIOS, DAYS = 5, 3, 2
DATA_SEED = 0
EPOCHS = 600
BATCH_SIZE = 4


def cache_dir() -> Path:
    return Path(os.environ.get("WDSGCN_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))


def load_hanoi():
    from wdsgcn.inp import read_inp

    return read_inp(HANOI)[1]


def datasets(net):
    """Training scenarios 0..4 and held-out evaluation scenarios 5..7."""
    from wdsgcn.scenarios import generate_scenarios

    train = generate_scenarios(net, TRAIN_SCENARIOS, DAYS, DATA_SEED)
    held_out = generate_scenarios(net, EVAL_SCENARIOS, DAYS, DATA_SEED, first_index=TRAIN_SCENARIOS)
    return train, held_out


def train_config():
    from wdsgcn.train import TrainConfig

    return TrainConfig(epochs=EPOCHS, batch_size=BATCH_SIZE, seed=0)


def cache_key(cfg, train_set) -> str:
    from wdsgcn.scenarios import dataset_bytes

    h = hashlib.sha256()
    h.update(json.dumps(cfg.as_dict(), sort_keys=True).encode())
    h.update(dataset_bytes(train_set))
    return h.hexdigest()[:16]


def checkpoint_path(cfg, train_set) -> Path:
    return cache_dir() / f"hanoi-desk-{cache_key(cfg, train_set)}.wdsm"


def desk_scale_checkpoint(verbose=False):
    """Return ``(params, seconds)``; trains and caches on first use (seconds is the training time)."""
    from wdsgcn.checkpoint import load_checkpoint, save_checkpoint
    from wdsgcn.train import train

    net = load_hanoi()
    train_set, _ = datasets(net)
    cfg = train_config()
    path = checkpoint_path(cfg, train_set)
    if path.exists():
        params, hyper = load_checkpoint(path)
        return params, float(hyper.get("train_seconds", "nan"))
    path.parent.mkdir(parents=True, exist_ok=True)
    demands, resistances = train_set.samples()
    curve = path.with_suffix(".curve.csv")
    t0 = time.perf_counter()

    def progress(epoch, loss, lr, k):
        if verbose:
            print(f"epoch {epoch} loss {loss:.6g} lr {lr:.3g} K {k} {time.perf_counter() - t0:.0f}s", flush=True)

    result = train(net, demands, resistances, cfg, curve_path=curve, progress=progress)
    hyper = {k: v for k, v in cfg.as_dict().items() if k not in ("layers", "latent")}
    hyper["train_seconds"] = result.seconds
    tmp = path.with_suffix(".tmp")
    save_checkpoint(tmp, result.params, hyper)
    tmp.replace(path)
    return result.params, result.seconds


# one line per acceptance criterion, printed again in the terminal summary
RESULTS: list = []


def record(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    return line


if __name__ == "__main__":
    sys.path.insert(0, str(ROOT / "src"))
    params, seconds = desk_scale_checkpoint(verbose=True)
    print(f"checkpoint ready ({seconds:.0f} s of training)")
