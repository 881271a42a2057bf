import numpy as np
import pytest

from iteforest import ConfigurationError, Dataset, ForestSpec, impute_bivariate, impute_counterfactuals
from iteforest.bivariate import bivariate_split_score


def _standardized_reduction(y, left):
    def sse(v):
        return float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0
    total = sse(y)
    return (total - sse(y[left]) - sse(y[~left])) / total


def test_score_constant_columns_is_zero(rng):
    x = rng.random(10)
    assert bivariate_split_score(np.ones((10, 2)), np.ones((10, 2), bool), x, 0.5) == 0


def test_score_with_one_column_missing(rng):
    x = rng.random(12)
    y = np.column_stack([rng.standard_normal(12), np.full(12, np.nan)])
    obs = np.zeros((12, 2), bool)
    obs[:, 0] = True
    got = bivariate_split_score(y, obs, x, 0.4)
    assert got == pytest.approx(_standardized_reduction(y[:, 0], x <= 0.4), rel=1e-12)


def test_score_identical_columns_doubles(rng):
    x = rng.random(15)
    v = rng.standard_normal(15)
    got = bivariate_split_score(np.column_stack([v, v]), np.ones((15, 2), bool), x, 0.6)
    assert got == pytest.approx(2 * _standardized_reduction(v, x <= 0.6), rel=1e-12)


def _additive(n, seed, sigma=0.1):
    r = np.random.default_rng(seed)
    x = r.uniform(-2, 2, (n, 3))
    y0 = 2 * x[:, 0] + x[:, 1] + sigma * r.standard_normal(n)
    y1 = y0 + 1
    t = r.permutation(np.arange(n) % 2)
    return x, t, np.column_stack([y0, y1])


def test_complete_data_is_returned_unchanged(rng):
    y = rng.standard_normal((40, 2))
    x = rng.standard_normal((40, 2))
    state = impute_bivariate(x, y, np.ones((40, 2), bool), ForestSpec(20, nodesize=1), 3)
    assert np.array_equal(state.y_pair, y)
    assert state.complete


def test_observed_entries_preserved_and_complete():
    x, t, pair = _additive(200, 1)
    y = pair[np.arange(200), t]
    state = impute_counterfactuals(Dataset(x, t, y), ForestSpec(50, nodesize=1, seed=2), 5)
    assert np.array_equal(state.y_pair[np.arange(200), t], y)
    assert state.complete and state.iteration == 5
    assert len(state.changes) == 4


def test_additive_model_recovery():
    x, t, pair = _additive(500, 7)
    y = pair[np.arange(500), t]
    state = impute_counterfactuals(Dataset(x, t, y), ForestSpec(200, nodesize=1, seed=1), 5)
    miss = np.arange(500), 1 - t
    assert np.mean(np.abs(state.y_pair[miss] - pair[miss])) < 0.5


def test_single_arm_rejected(rng):
    x = rng.standard_normal((10, 2))
    with pytest.raises(ConfigurationError):
        impute_counterfactuals(Dataset(x, np.ones(10, int), rng.standard_normal(10)))


def test_deterministic():
    x, t, pair = _additive(100, 3)
    y = pair[np.arange(100), t]
    d = Dataset(x, t, y)
    a = impute_counterfactuals(d, ForestSpec(30, nodesize=1, seed=5), 3).y_pair
    b = impute_counterfactuals(d, ForestSpec(30, nodesize=1, seed=5), 3, threads=2).y_pair
    assert np.array_equal(a, b)


def test_tree_fallback_uses_tree_mean():
    # arms separated by x, so no leaf ever holds a donor from the other arm
    x = np.linspace(-1, 1, 200)[:, None]
    t = (x[:, 0] > 0).astype(int)
    y = 10 * t + x[:, 0]
    d = Dataset(x, t, y)
    tree = impute_counterfactuals(d, ForestSpec(300, nodesize=1, seed=2), 1, fallback="tree")
    near = impute_counterfactuals(d, ForestSpec(300, nodesize=1, seed=2), 1)
    y1_control = tree.y_pair[t == 0, 1]
    # rows at the boundary can share a leaf with treated rows in some trees
    assert np.mean(np.abs(y1_control - y[t == 1].mean()) < 0.05) > 0.9
    # the nearest ancestor with treated donors sits near the boundary
    assert near.y_pair[t == 0, 1].mean() < y1_control.mean()


def test_unknown_fallback_rejected(rng):
    x, t, pair = _additive(40, 1)
    with pytest.raises(ConfigurationError):
        impute_counterfactuals(Dataset(x, t, pair[np.arange(40), t]), fallback="root")
