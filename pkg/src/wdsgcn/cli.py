"""Command-line entry point ``wdsgcn``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
Flows and demands in CSV files use the flow units declared by the INP file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .fixpoint import FixpointError, fixpoint_apply
from .inp import FLOW_UNITS, InpError, network_summary, read_inp
from .network import HydraulicState, NetworkError, headloss_residual, node_imbalance
from .oracle import SolverConfig, SolverError, solve_steady_state
from .scenarios import DatasetError, generate_scenarios, load_dataset, save_dataset
from .train import TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("wdsgcn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# flag name -> (TrainConfig field, type)
TRAIN_KEYS = {
    "seed": ("seed", int),
    "epochs": ("epochs", int),
    "k-min": ("k_min", int),
    "k-max": ("k_max", int),
    "rho": ("rho", float),
    "delta": ("delta", float),
    "latent-dim": ("latent", int),
    "layers": ("layers", int),
    "lr": ("lr", float),
    "batch-size": ("batch_size", int),
    "grad-clip": ("grad_clip_norm", float),
    "grad-mode": ("grad_mode", str),
}


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment; keys use flag spelling."""
    out = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{no}: expected key=value, got {raw!r}")
        out[key.strip().lstrip("-").replace("_", "-")] = value.strip()
    return out


def _apply_config(args):
    if not getattr(args, "config", None):
        return
    try:
        values = read_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    for key, value in values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"unknown config key {key!r}")
        current = getattr(args, attr)
        kind = TRAIN_KEYS[key][1] if key in TRAIN_KEYS else (type(current) if current is not None else str)
        try:
            setattr(args, attr, kind(value))
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {value!r}") from None


def _train_config(args) -> TrainConfig:
    kwargs = {}
    for flag, (name, _) in TRAIN_KEYS.items():
        value = getattr(args, flag.replace("-", "_"), None)
        if value is not None:
            kwargs[name] = value
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_network(args):
    doc, net = read_inp(args.inp, demand_multiplier=args.demand_multiplier)
    units = (doc.option("UNITS", "GPM") or "GPM").upper()
    return doc, net, FLOW_UNITS[units]


def _out_handle(path):
    return open(path, "w", newline="") if path and path != "-" else sys.stdout


def _write_nodes(path, net, heads, demands, scale):
    fh = _out_handle(path)
    try:
        w = csv.writer(fh)
        w.writerow(["node_id", "head_m", "demand"])
        for nid, h, d in zip(net.node_ids, heads, demands):
            w.writerow([nid, repr(float(h)), repr(float(d) / scale)])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _write_edges(path, net, flows, scale):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_id", "from", "to", "flow"])
        for p, pid in enumerate(net.pipe_ids):
            e = 2 * p
            w.writerow([pid, net.node_ids[net.src[e]], net.node_ids[net.dst[e]], repr(float(flows[e]) / scale)])


def _read_demands(path, net, scale):
    """CSV with columns ``node_id,demand``; missing nodes keep demand 0."""
    index = {str(nid): i for i, nid in enumerate(net.node_ids)}
    d = np.zeros(net.n_nodes)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:2]] != ["node_id", "demand"]:
        raise DatasetError(f"{path}: header must be 'node_id,demand'")
    for no, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) < 2 or row[0].strip() not in index:
            raise DatasetError(f"{path}:{no}: unknown node {row[0] if row else ''!r}")
        try:
            d[index[row[0].strip()]] = float(row[1]) * scale
        except ValueError:
            raise DatasetError(f"{path}:{no}: demand {row[1]!r} is not a number") from None
    return d


def _read_flows(path, net, scale):
    """CSV ``edge_id,from,to,flow`` with one row per pipe; returns directed-edge flows."""
    index = {str(pid): p for p, pid in enumerate(net.pipe_ids)}
    q = np.zeros(net.n_edges)
    seen = set()
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:4]] != ["edge_id", "from", "to", "flow"]:
        raise DatasetError(f"{path}: header must be 'edge_id,from,to,flow'")
    for no, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) < 4 or row[0].strip() not in index:
            raise DatasetError(f"{path}:{no}: unknown pipe {row[0] if row else ''!r}")
        p = index[row[0].strip()]
        a, b = str(net.node_ids[net.src[2 * p]]), str(net.node_ids[net.dst[2 * p]])
        ends = (row[1].strip(), row[2].strip())
        if ends == (a, b):
            sign = 1.0
        elif ends == (b, a):
            sign = -1.0
        else:
            raise DatasetError(f"{path}:{no}: pipe {row[0]} connects {a} and {b}, not {ends[0]} and {ends[1]}")
        try:
            value = float(row[3]) * scale * sign
        except ValueError:
            raise DatasetError(f"{path}:{no}: flow {row[3]!r} is not a number") from None
        q[2 * p], q[2 * p + 1] = value, -value
        seen.add(p)
    if len(seen) != net.n_pipes:
        missing = [net.pipe_ids[p] for p in range(net.n_pipes) if p not in seen][:5]
        raise DatasetError(f"{path}: no flow given for pipes {missing}")
    return q


# --------------------------------------------------------------------------
# subcommands


def cmd_parse(args):
    doc, net, _ = _load_network(args)
    text = json.dumps(network_summary(doc, net), indent=2)
    if args.out and args.out != "-":
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_solve(args):
    _, net, scale = _load_network(args)
    demands = _read_demands(args.demands, net, scale) if args.demands else net.base_demand.copy()
    state = solve_steady_state(net, demands, SolverConfig())
    _write_nodes(args.out, net, state.heads, state.demands, scale)
    if args.flows:
        _write_edges(args.flows, net, state.flows, scale)
    imb = float(np.max(np.abs(node_imbalance(net, state)[net.consumers]), initial=0.0))
    hl = float(np.max(np.abs(headloss_residual(net, state)), initial=0.0))
    print(f"max node imbalance {imb:.3e} m3/s; max head-loss residual {hl:.3e} m", file=sys.stderr)
    return EXIT_OK


def cmd_gen(args):
    _, net, _ = _load_network(args)
    ds = generate_scenarios(net, args.scenarios, args.days, args.seed, first_index=args.first_index)
    save_dataset(args.out, ds)
    print(f"wrote {len(ds)} scenarios, {ds.n_samples} samples to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    _, net, _ = _load_network(args)
    cfg = _train_config(args)
    ds = load_dataset(args.dataset, net).split(args.split)
    demands, resistances = ds.samples()

    def progress(epoch, loss, lr, k):
        if epoch % max(1, args.log_every) == 0 or epoch == cfg.epochs - 1:
            print(f"epoch {epoch} loss {loss:.6g} lr {lr:.3g} K {k}", file=sys.stderr)

    res = train(net, demands, resistances, cfg, curve_path=args.curve, progress=progress)
    hyper = {k: v for k, v in cfg.as_dict().items() if k not in ("layers", "latent")}
    save_checkpoint(args.out, res.params, hyper)
    print(f"trained {cfg.epochs} epochs in {res.seconds:.1f} s; checkpoint {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args):
    from .evaluate import evaluate, robustness_probe

    _, net, _ = _load_network(args)
    params, _ = load_checkpoint(args.model)
    ds = load_dataset(args.dataset, net).split(args.split)
    report = evaluate(params, ds, iterations=args.iterations)
    text = json.dumps(dict(report.rows()), indent=2)
    if args.out and args.out != "-":
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.robustness:
        robustness_probe(params, ds, iterations=args.iterations, seed=args.seed, csv_path=args.robustness)
    return EXIT_OK


def cmd_bench(args):
    from .evaluate import benchmark

    _, net, _ = _load_network(args)
    params, _ = load_checkpoint(args.model)
    ds = load_dataset(args.dataset, net)
    demands, resistances = ds.samples()
    try:
        counts = [int(x) for x in args.samples.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--samples must be a comma-separated list of integers, got {args.samples!r}") from None
    rows = benchmark(params, net, demands, resistances, counts, iterations=args.iterations, csv_path=args.out)
    for n, o, e in rows:
        print(f"{n:>8d} samples  oracle {o:9.3f} s  emulator {e:9.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_fixpoint(args):
    _, net, scale = _load_network(args)
    q = _read_flows(args.flows_csv, net, scale)
    heads, demands, _ = fixpoint_apply(net, q)
    _write_nodes(args.out, net, heads, demands, scale)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="wdsgcn", description="Water-network emulator and reference solver.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_help="output file ('-' for stdout)"):
        sp.add_argument("inp", help="network INP file")
        sp.add_argument("-o", "--out", default="-", help=out_help)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--demand-multiplier", type=float, default=1.0, help="scale applied to all base demands")
        sp.add_argument("--config", help="key=value file; its values override flags")

    sp = sub.add_parser("parse", help="summarise an INP file as JSON")
    common(sp)
    sp.set_defaults(func=cmd_parse)

    sp = sub.add_parser("solve", help="reference steady-state solve, node CSV out")
    common(sp)
    sp.add_argument("demands", nargs="?", help="CSV node_id,demand (default: base demands)")
    sp.add_argument("--flows", help="also write pipe flows to this CSV")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("gen", help="generate a scenario dataset")
    common(sp, "dataset file")
    sp.add_argument("--scenarios", type=int, default=20)
    sp.add_argument("--days", type=int, default=2)
    sp.add_argument("--first-index", type=int, default=0, help="index of the first scenario")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train the emulator")
    common(sp, "checkpoint file")
    sp.add_argument("dataset")
    defaults = TrainConfig()
    sp.add_argument("--epochs", type=int, default=defaults.epochs)
    sp.add_argument("--k-min", type=int, default=defaults.k_min)
    sp.add_argument("--k-max", type=int, default=defaults.k_max)
    sp.add_argument("--rho", type=float, default=defaults.rho)
    sp.add_argument("--delta", type=float, default=defaults.delta)
    sp.add_argument("--latent-dim", type=int, default=defaults.latent)
    sp.add_argument("--layers", type=int, default=defaults.layers)
    sp.add_argument("--lr", type=float, default=defaults.lr)
    sp.add_argument("--batch-size", type=int, default=defaults.batch_size)
    sp.add_argument("--grad-clip", type=float, default=defaults.grad_clip_norm)
    sp.add_argument("--grad-mode", choices=("last", "full"), default=defaults.grad_mode)
    sp.add_argument("--split", choices=("train", "val", "test", "all"), default="train")
    sp.add_argument("--curve", help="loss curve CSV (epoch,loss,lr,K)")
    sp.add_argument("--log-every", type=int, default=10)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a checkpoint against truth and the reference solver")
    common(sp, "JSON report")
    sp.add_argument("dataset")
    sp.add_argument("model")
    sp.add_argument("--iterations", type=int, default=TrainConfig().eval_iterations)
    sp.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    sp.add_argument("--robustness", help="write demand MRAE vs diameter noise to this CSV")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bench", help="time reference solver against emulator")
    common(sp, "CSV samples,oracle_s,emulator_s")
    sp.add_argument("dataset")
    sp.add_argument("model")
    sp.add_argument("--samples", default="100,1000,10000")
    sp.add_argument("--iterations", type=int, default=TrainConfig().eval_iterations)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("fixpoint", help="one head-propagation pass from given pipe flows")
    common(sp)
    sp.add_argument("flows_csv", help="CSV edge_id,from,to,flow")
    sp.set_defaults(func=cmd_fixpoint)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        _apply_config(args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"wdsgcn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InpError, NetworkError, DatasetError, CheckpointError, OSError) as exc:
        print(f"wdsgcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverError, FixpointError, TrainingDiverged, FloatingPointError) as exc:
        print(f"wdsgcn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"wdsgcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
