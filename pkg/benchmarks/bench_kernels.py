"""Time the numba kernels against their numpy fallbacks.

Kernel timings use Hanoi-sized batched inputs. The end-to-end row runs one
emulator forward pass in a fresh interpreter, once with numba and once with
``WDSGCN_DISABLE_NUMBA=1``.

    python benchmarks/bench_kernels.py [--batch 64] [--repeat 20] [-o timings.csv]
"""
import argparse
import csv
import os
import subprocess
import sys
import timeit

import numpy as np

from wdsgcn import _kernels as k
from wdsgcn.gcn import GraphBatch
from wdsgcn.inp import read_inp

HANOI = os.path.join(os.path.dirname(__file__), "..", "src", "wdsgcn", "data", "hanoi.inp")

E2E = """
import time, numpy as np
from wdsgcn.evaluate import run_emulator
from wdsgcn.gcn import ModelParams
from wdsgcn.inp import read_inp
net = read_inp({path!r})[1]
d = np.tile(net.base_demand, ({batch}, 1))
r = np.tile(net.resistance, ({batch}, 1))
p = ModelParams.init()
run_emulator(p, net, d[:2], r[:2], iterations=2)  # compile
t = time.perf_counter()
run_emulator(p, net, d, r, iterations=5)
print(time.perf_counter() - t)
"""


def kernel_cases(batch, rng):
    net = read_inp(HANOI)[1]
    g = GraphBatch.stack(net, np.tile(net.resistance, (batch, 1)))
    msgs = rng.normal(size=(g.n_edges, 128))
    heads = np.where(g.reservoir_mask, g.reservoir_head, 0.0)
    loss = np.abs(rng.normal(size=g.n_edges))
    dh = rng.normal(size=g.n_edges)
    return {
        "segment_max": lambda impl: impl(msgs, g.src, g.n_nodes),
        "scatter_add_rows": lambda impl: impl(msgs, g.src, g.n_nodes),
        "propagate_heads": lambda impl: impl(heads, g.src, g.dst, loss, g.reservoir_mask, g.n_nodes),
        "hw_flow": lambda impl: impl(dh, g.resistance, 1e-10),
    }


def best_of(fn, repeat):
    fn()  # warm up (and compile)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def end_to_end(batch, disable):
    env = dict(os.environ)
    env.pop("WDSGCN_DISABLE_NUMBA", None)
    if disable:
        env["WDSGCN_DISABLE_NUMBA"] = "1"
    code = E2E.format(path=os.path.abspath(HANOI), batch=batch)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("-o", "--out", help="CSV output (default: stdout only)")
    args = ap.parse_args()
    if not k.HAVE_NUMBA:
        sys.exit("numba is unavailable or disabled; nothing to compare")

    rng = np.random.default_rng(0)
    rows = []
    for name, call in kernel_cases(args.batch, rng).items():
        t_np = best_of(lambda: call(getattr(k, f"{name}_numpy")), args.repeat)
        t_nb = best_of(lambda: call(getattr(k, f"{name}_numba")), args.repeat)
        rows.append((name, t_np, t_nb))
    rows.append(("emulator_forward", end_to_end(args.batch, True), end_to_end(args.batch, False)))

    print(f"{'kernel':<18} {'numpy_s':>12} {'numba_s':>12} {'speedup':>8}")
    for name, a, b in rows:
        print(f"{name:<18} {a:12.6f} {b:12.6f} {a / b:8.1f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kernel", "numpy_s", "numba_s"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
