import csv

import numpy as np
import pytest

from wdsgcn.evaluate import (
    OracleRun,
    benchmark,
    conformity,
    evaluate,
    relative_errors,
    robustness_probe,
    run_emulator,
    run_oracle,
    trimmed_mask,
)
from wdsgcn.fixpoint import DEFAULT_ZETA, reconstruct_flows_demands
from wdsgcn.gcn import GraphBatch, ModelParams
from wdsgcn.scenarios import generate_scenarios
from wdsgcn.synthetic import random_network


@pytest.fixture(scope="module")
def small():
    net = random_network(7, 3, seed=4, demand_scale=0.01)
    ds = generate_scenarios(net, 2, 1, seed=0)
    return net, ds


def test_relative_errors_perfect_and_known():
    t = np.array([[1.0, 2.0, 0.0], [4.0, 1e-12, 1.0]])
    np.testing.assert_array_equal(relative_errors(t, t, 1e-9), [0.0, 0.0])
    est = t * 1.1
    np.testing.assert_allclose(relative_errors(t, est, 1e-9), [0.1, 0.1])
    # rows where every entry is below the floor score zero
    assert relative_errors(np.zeros((1, 3)), np.ones((1, 3)), 1e-9)[0] == 0.0


def test_conformity_of_oracle_state_is_zero(small):
    net, ds = small
    oracle = run_oracle(ds.split("test"))
    graph = GraphBatch.stack(net)
    for h in oracle.heads:
        q, _ = reconstruct_flows_demands(graph, h, DEFAULT_ZETA)
        assert conformity(net, h, q) == 0
    flipped = np.array(q)
    flipped[0] = -flipped[0]
    assert conformity(net, h, flipped) == 1


def test_trimmed_mask_drops_worst():
    v = np.arange(40.0)
    keep = trimmed_mask(v, 0.05)
    assert keep.sum() == 38 and not keep[-1] and not keep[-2]
    assert np.std(v[keep]) <= np.std(v)


def test_evaluate_report_shapes(small):
    net, ds = small
    params = ModelParams.init(2, 8)
    test = ds.split("test")
    report = evaluate(params, test, iterations=3)
    assert report.n_samples == test.n_samples
    assert report.per_sample_demand.shape == (test.n_samples,)
    assert report.demand_trimmed.std <= report.demand.std + 1e-15
    keys = dict(report.rows())
    assert {"demand_mrae_mean", "head_mrae_mean", "flow_mrae_mean", "conformity"} <= set(keys)


def test_evaluate_rejects_mismatched_oracle(small):
    net, ds = small
    empty = OracleRun(np.zeros((1, net.n_nodes)), np.zeros((1, net.n_edges)), np.zeros(1))
    with pytest.raises(ValueError):
        evaluate(ModelParams.init(1, 4), ds, oracle=empty, iterations=1)


def test_emulator_batches_agree(small):
    net, ds = small
    params = ModelParams.init(2, 8, seed=1)
    d, r = ds.split("val").samples()
    a = run_emulator(params, net, d, r, iterations=3, batch_size=2)
    b = run_emulator(params, net, d, r, iterations=3, batch_size=64)
    np.testing.assert_allclose(a.d_hat, b.d_hat, rtol=1e-12, atol=1e-15)


def test_benchmark_csv(small, tmp_path):
    net, ds = small
    d, r = ds.samples()
    path = tmp_path / "bench.csv"
    rows = benchmark(ModelParams.init(1, 4), net, d, r, [0, 3, 120], iterations=2, csv_path=path)
    assert [n for n, _, _ in rows] == [3, 120]
    lines = list(csv.reader(path.open()))
    assert lines[0] == ["samples", "oracle_s", "emulator_s"] and len(lines) == 3
    empty = tmp_path / "empty.csv"
    assert benchmark(ModelParams.init(1, 4), net, d, r, [0], csv_path=empty) == []
    assert empty.read_text().splitlines() == ["samples,oracle_s,emulator_s"]


def test_robustness_csv(small, tmp_path):
    net, ds = small
    path = tmp_path / "rob.csv"
    rows = robustness_probe(ModelParams.init(1, 4), ds.split("test"), sigmas=(0.0, 0.05), iterations=2, csv_path=path)
    assert [s for s, _, _ in rows] == [0.0, 0.05]
    assert path.read_text().splitlines()[0] == "sigma,demand_mrae_mean,demand_mrae_std"
