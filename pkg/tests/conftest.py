import numpy as np
import pytest

from iteforest import Dataset


def brute_force_split(x, y, candidate_vars, nodesize=1, w=None):
    """Exhaustive (variable, midpoint) scan of weighted SSE reduction.

    Ties go to the lowest variable index, then the smallest threshold.
    Returns (variable, threshold, gain) or None.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.ones(len(y)) if w is None else np.asarray(w, float)
    keep = w > 0
    x, y, w = x[keep], y[keep], w[keep]

    def sse(mask):
        ww = w[mask]
        if ww.sum() == 0:
            return 0.0
        m = np.sum(ww * y[mask]) / ww.sum()
        return float(np.sum(ww * (y[mask] - m) ** 2))

    parent = sse(np.ones(len(y), bool))
    if parent <= 1e-12 * max(1.0, np.sum(w * y * y)):
        return None
    best = None
    for j in sorted(candidate_vars):
        vals = np.unique(x[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = x[:, j] <= thr
            if w[left].sum() < nodesize or w[~left].sum() < nodesize:
                continue
            gain = parent - sse(left) - sse(~left)
            if best is None or gain > best[2] + 1e-9 * parent:
                best = (j, thr, gain)
    return best


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def shift_data(n, delta, seed, sigma=0.01, p=5):
    """y = f(x) + delta * T with random treatment."""
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, p))
    t = r.integers(0, 2, n)
    y = x[:, 0] + np.sin(x[:, 1]) + delta * t + sigma * r.standard_normal(n)
    return Dataset(x, t, y)
