import csv
import json

import numpy as np
import pytest

from wdsgcn.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main, read_config

from conftest import GOLDEN

MINIMAL = str(GOLDEN / "minimal.inp")


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_json(capsys):
    assert main(["parse", MINIMAL]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary


def test_solve_writes_csvs(tmp_path, capsys):
    nodes, edges = tmp_path / "n.csv", tmp_path / "e.csv"
    assert main(["solve", MINIMAL, "-o", str(nodes), "--flows", str(edges)]) == EXIT_OK
    n = rows(nodes)
    assert n[0] == ["node_id", "head_m", "demand"] and len(n) == 4
    by_id = {r[0]: r for r in n[1:]}
    assert float(by_id["R1"][1]) == 60.0
    assert float(by_id["J1"][2]) == pytest.approx(5.0, rel=1e-6)
    e = rows(edges)
    assert e[0] == ["edge_id", "from", "to", "flow"]
    # tree network: P1 carries both demands, in LPS
    flows = {r[0]: (r[1], r[2], float(r[3])) for r in e[1:]}
    src, dst, q = flows["P1"]
    assert abs(q) == pytest.approx(8.0, rel=1e-6)
    assert "imbalance" in capsys.readouterr().err


def test_solve_with_demand_file(tmp_path):
    d = tmp_path / "d.csv"
    d.write_text("node_id,demand\nJ1,1\nJ2,2\n")
    out = tmp_path / "n.csv"
    assert main(["solve", MINIMAL, str(d), "-o", str(out)]) == EXIT_OK
    assert float({r[0]: r for r in rows(out)[1:]}["J2"][2]) == pytest.approx(2.0)


def test_fixpoint_round_trip(tmp_path):
    nodes, edges, fp = tmp_path / "n.csv", tmp_path / "e.csv", tmp_path / "fp.csv"
    assert main(["solve", MINIMAL, "-o", str(nodes), "--flows", str(edges)]) == EXIT_OK
    assert main(["fixpoint", MINIMAL, str(edges), "-o", str(fp)]) == EXIT_OK
    a = {r[0]: float(r[1]) for r in rows(nodes)[1:]}
    b = {r[0]: float(r[1]) for r in rows(fp)[1:]}
    for k in a:
        assert b[k] == pytest.approx(a[k], abs=1e-6)


def test_usage_errors(capsys):
    assert main([]) == EXIT_USAGE
    assert main(["parse", MINIMAL, "--bogus"]) == EXIT_USAGE
    assert main(["nosuch"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_data_errors(tmp_path):
    assert main(["parse", str(tmp_path / "missing.inp")]) == EXIT_DATA
    assert main(["parse", str(GOLDEN / "unknown_node.inp")]) == EXIT_DATA
    bad = tmp_path / "d.csv"
    bad.write_text("node_id,demand\nZZ,1\n")
    assert main(["solve", MINIMAL, str(bad)]) == EXIT_DATA
    junk = tmp_path / "junk.wdsd"
    junk.write_bytes(b"nope")
    assert main(["train", MINIMAL, str(junk), "-o", str(tmp_path / "m")]) == EXIT_DATA


def test_read_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nepochs = 2\nlatent_dim=4\n")
    assert read_config(cfg) == {"epochs": "2", "latent-dim": "4"}


def test_gen_train_eval_bench(tmp_path):
    ds, model, report = tmp_path / "d.wdsd", tmp_path / "m.wdsm", tmp_path / "r.json"
    assert main(["gen", MINIMAL, "-o", str(ds), "--scenarios", "2", "--days", "1"]) == EXIT_OK
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs=2\nlatent-dim=4\nlayers=1\nk-min=2\nk-max=2\n")
    curve = tmp_path / "curve.csv"
    assert main(["train", MINIMAL, str(ds), "-o", str(model), "--config", str(cfg), "--curve", str(curve)]) == EXIT_OK
    assert len(rows(curve)) == 3
    rob = tmp_path / "rob.csv"
    assert main(["eval", MINIMAL, str(ds), str(model), "-o", str(report), "--iterations", "2",
                 "--split", "test", "--robustness", str(rob)]) == EXIT_OK
    values = json.loads(report.read_text())
    assert np.isfinite(values["demand_mrae_mean"])
    assert len(rows(rob)) == 7
    bench = tmp_path / "b.csv"
    assert main(["bench", MINIMAL, str(ds), str(model), "-o", str(bench), "--samples", "2,5"]) == EXIT_OK
    assert [r[0] for r in rows(bench)] == ["samples", "2", "5"]


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("nonsense=1\n")
    assert main(["parse", MINIMAL, "--config", str(cfg)]) == EXIT_USAGE
