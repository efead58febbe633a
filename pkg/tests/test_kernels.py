"""The numba and numpy kernel paths must agree."""
import numpy as np
import pytest

from wdsgcn import _kernels as k

pytestmark = pytest.mark.skipif(not k.HAVE_NUMBA, reason="numba not importable")


def test_segment_max_paths_agree(rng):
    values = rng.normal(size=(200, 7))
    values[5] = values[3]  # force ties
    segment = rng.integers(0, 40, size=200)
    segment[:40] = np.arange(40)
    a = k.segment_max_numpy(values, segment, 40)
    b = k.segment_max_numba(values, segment, 40)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_segment_max_ties_pick_first_row():
    values = np.array([[1.0, 5.0], [3.0, 5.0], [3.0, 2.0]])
    seg = np.array([0, 0, 0])
    for fn in (k.segment_max_numpy, k.segment_max_numba):
        out, arg = fn(values, seg, 1)
        np.testing.assert_array_equal(out, [[3.0, 5.0]])
        np.testing.assert_array_equal(arg, [[1, 0]])


def test_segment_max_vector_input(rng):
    values = rng.normal(size=50)
    seg = np.repeat(np.arange(10), 5)
    a = k.segment_max_numpy(values, seg, 10)
    b = k.segment_max_numba(values, seg, 10)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[0], values.reshape(10, 5).max(axis=1))


def test_scatter_add_paths_agree(rng):
    values = rng.normal(size=(300, 4))
    index = rng.integers(0, 17, size=300)
    np.testing.assert_allclose(
        k.scatter_add_rows_numpy(values, index, 17), k.scatter_add_rows_numba(values, index, 17), rtol=1e-13, atol=1e-13
    )
    np.testing.assert_allclose(
        k.scatter_add_rows_numpy(values[:, 0], index, 17), k.scatter_add_rows_numba(values[:, 0], index, 17), rtol=1e-13
    )


def test_propagate_paths_agree(rng):
    from wdsgcn.synthetic import random_network
    from wdsgcn.fixpoint import FixpointInput, edge_losses

    for seed in range(20):
        net = random_network(25, 15, seed)
        q = rng.normal(size=net.n_edges)
        inp = FixpointInput.build(net, q)
        w = edge_losses(net, q)
        args = (inp.initial_heads, net.src, net.dst, w, inp.pinned, net.n_nodes)
        h1, j1, ok1 = k.propagate_heads_numpy(*args)
        h2, j2, ok2 = k.propagate_heads_numba(*args)
        np.testing.assert_array_equal(h1, h2)
        assert (j1, ok1) == (j2, ok2) and ok1


def test_hw_flow_paths_agree(rng):
    dh = rng.normal(scale=10, size=100)
    dh[0] = 0.0
    r = rng.uniform(0.1, 100, size=100)
    q1, g1 = k.hw_flow_numpy(dh, r, 1e-10)
    q2, g2 = k.hw_flow_numba(dh, r, 1e-10)
    np.testing.assert_allclose(q1, q2, rtol=1e-14)
    np.testing.assert_allclose(g1, g2, rtol=1e-14)


def test_selu_matches_definition(rng):
    x = rng.normal(scale=3, size=(50, 3))
    out, ex = k.selu(x)
    ref = k.SELU_SCALE * np.where(x > 0, x, k.SELU_ALPHA * (np.exp(x) - 1.0))
    np.testing.assert_allclose(out, ref, rtol=1e-15, atol=1e-15)
    assert k.selu(np.zeros(1))[0][0] == 0.0
