import numpy as np
import pytest

from wdsgcn import autodiff as ad

from gradcheck import numeric_grad


def _check(build, *arrays, tol=1e-6, eps=1e-6):
    """``build(*vars) -> scalar Var``; compares tape gradients with central differences."""
    tape = ad.Tape()
    leaves = [tape.leaf(a, name=str(i)) for i, a in enumerate(arrays)]
    grads = tape.backward(build(*leaves))

    def f():
        t = ad.Tape(enabled=False)
        return float(build(*[t.const(a) for a in arrays]).value)

    for i, a in enumerate(arrays):
        num = numeric_grad(f, a, eps)
        np.testing.assert_allclose(grads[str(i)], num, rtol=tol, atol=tol * max(1.0, np.abs(num).max()))


def test_relu_values():
    t = ad.Tape(enabled=False)
    np.testing.assert_array_equal(ad.relu(t.const([-3.0, 2.0, 0.0])).value, [0.0, 2.0, 0.0])


def test_relu_subgradient_zero_at_zero():
    tape = ad.Tape()
    x = tape.leaf(np.array([0.0, 1.0]), "x")
    g = tape.backward(ad.total(ad.relu(x)))["x"]
    np.testing.assert_array_equal(g, [0.0, 1.0])


def test_selu_zero_and_gradient():
    t = ad.Tape(enabled=False)
    assert ad.selu(t.const([0.0])).value[0] == 0.0
    for x0 in (-0.5, 0.5):
        tape = ad.Tape()
        x = tape.leaf(np.array([x0]), "x")
        g = tape.backward(ad.total(ad.selu(x)))["x"][0]
        t2 = ad.Tape(enabled=False)
        h = 1e-6
        fd = (ad.selu(t2.const([x0 + h])).value[0] - ad.selu(t2.const([x0 - h])).value[0]) / (2 * h)
        assert abs(g - fd) / abs(fd) <= 1e-6


def test_segment_max_values_and_routing():
    tape = ad.Tape()
    m = tape.leaf(np.array([[1.0, 5.0], [3.0, 2.0], [7.0, 7.0]]), "m")
    out = ad.segment_max(m, np.array([0, 0, 1]), 2)
    np.testing.assert_array_equal(out.value, [[3.0, 5.0], [7.0, 7.0]])
    g = tape.backward(ad.total(out))["m"]
    np.testing.assert_array_equal(g, [[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])


def test_segment_max_gradient_fd(rng):
    m = rng.normal(size=(12, 3))
    seg = np.repeat(np.arange(4), 3)
    w = rng.normal(size=(4, 3))
    _check(lambda a: ad.total(ad.segment_max(a, seg, 4) * w), m)


def test_segment_max_empty_segment_is_error():
    t = ad.Tape(enabled=False)
    with pytest.raises(ValueError, match="without incident"):
        ad.segment_max(t.const(np.ones((2, 1))), np.array([0, 0]), 2)


def test_signed_power_values_and_grad():
    t = ad.Tape(enabled=False)
    assert ad.signed_power(t.const([0.0]), 1.852).value[0] == 0.0
    assert ad.signed_power(t.const([-1.0]), 1.852).value[0] == -1.0
    tape = ad.Tape()
    x = tape.leaf(np.array([2.0, 0.0]), "x")
    g = tape.backward(ad.total(ad.signed_power(x, 1.852)))["x"]
    fd = ((2 + 1e-6) ** 1.852 - (2 - 1e-6) ** 1.852) / 2e-6
    assert abs(g[0] - fd) / fd <= 1e-6
    assert g[1] == 0.0
    tape = ad.Tape()
    x = tape.leaf(np.array([0.0, 1e-20]), "x")
    g = tape.backward(ad.total(ad.signed_power(x, 1 / 1.852)))["x"]
    assert np.all(np.isfinite(g)) and g[0] == 0.0


def test_elementwise_and_structure_ops(rng):
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(5, 3))
    w = rng.normal(size=(3, 4))
    idx = np.array([0, 2, 2, 4, 1, 0])
    proj = rng.normal(size=(5, 1))
    _check(lambda x, y, v: ad.total((x * y - x) @ v), a, b, w)
    _check(lambda x, y: ad.mean_abs(ad.maximum(x, y) + 0.3), a, b)
    _check(lambda x: ad.total(ad.gather(ad.selu(x), idx) * 1.7), a)
    _check(lambda x: ad.total(ad.segment_sum(x, np.array([0, 1, 1, 2, 0]), 3) * 2.0), a)
    _check(lambda x, y: ad.total(ad.concat([x, ad.slice_cols(y, 1, 3)]) @ proj), a, b)
    _check(lambda x: ad.total(ad.flatten(ad.slice_rows(x, 1, 4)) * np.arange(9.0)), a)
    _check(lambda x: ad.total(ad.column(ad.flatten(x)) * 2.0 - 1.0), a)
    _check(lambda x: ad.total(ad.neg(x) + (3.0 - x)), a)
    _check(lambda x: ad.total(ad.mask_fill(x, a > 0, -1.0)), a)


def test_sum_of_parameters_has_unit_gradient(rng):
    tape = ad.Tape()
    p = tape.leaf(rng.normal(size=(3, 2)), "p")
    np.testing.assert_array_equal(tape.backward(ad.total(p))["p"], np.ones((3, 2)))


def test_backward_twice_is_identical(rng):
    tape = ad.Tape()
    p = tape.leaf(rng.normal(size=(4, 4)), "p")
    loss = ad.mean_abs(ad.selu(p @ p) - 0.5)
    g1 = tape.backward(loss)["p"].copy()
    g2 = tape.backward(loss)["p"]
    np.testing.assert_array_equal(g1, g2)


def test_non_scalar_loss_rejected():
    tape = ad.Tape()
    p = tape.leaf(np.ones(3), "p")
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(p * 2.0)


def test_unreached_leaf_gets_zero():
    tape = ad.Tape()
    a = tape.leaf(np.ones(2), "a")
    tape.leaf(np.ones(3), "b")
    g = tape.backward(ad.total(a))
    np.testing.assert_array_equal(g["b"], np.zeros(3))


def test_rank_limit():
    with pytest.raises(ValueError, match="rank"):
        ad.Tape().leaf(np.zeros((2, 2, 2)))


def test_disabled_tape_records_nothing():
    tape = ad.Tape(enabled=False)
    x = tape.leaf(np.ones(3))
    y = ad.selu(x) * 2.0
    assert tape.nodes == [] and not y.requires_grad
