"""Central finite-difference gradient checking shared by the tests."""
import numpy as np


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f`` around array ``x`` (restored afterwards)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric, abs_floor=1e-8, small=1e-4):
    """Worst error: relative where the numeric gradient is not small, absolute (scaled to 1e-4) elsewhere."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    big = np.abs(numeric) >= small
    worst = 0.0
    if big.any():
        worst = float(np.max(np.abs(analytic[big] - numeric[big]) / np.abs(numeric[big])))
    if (~big).any():
        # report small-gradient mismatch on the same scale as the relative test
        worst = max(worst, float(np.max(np.abs(analytic[~big] - numeric[~big]))) / abs_floor * 1e-4)
    return worst
