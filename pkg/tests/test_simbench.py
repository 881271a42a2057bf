import math

import numpy as np
import pytest

import iteforest.simbench as sb
from iteforest import ConfigurationError
from oracles import ate_by_quadrature, double_sum_metrics


def row(**nonzero):
    x = np.zeros(20)
    for k, v in nonzero.items():
        x[int(k[1:]) - 1] = v
    return x


# --- generators -----------------------------------------------------------------

def test_covariate_law():
    x = sb.simulate_covariates(10000, 1)
    assert x.shape == (10000, 20)
    assert abs(x[:, 11].mean() - 0.5) < 0.02
    assert abs(x[:, 0].var() - 1) < 0.05
    assert set(np.unique(x[:, 11:])) == {0.0, 1.0}
    assert np.array_equal(x, sb.simulate_covariates(10000, 1))


def test_linear_predictor_values():
    assert sb.linear_predictor(row()) == -2
    assert sb.propensity(row()) == pytest.approx(1 / (1 + math.e ** 2), rel=1e-14)
    assert sb.linear_predictor(row(X12=1, X13=1)) == pytest.approx(-0.225, rel=1e-14)
    e = sb.propensity(sb.simulate_covariates(1000, 2) * 50)
    assert np.all((e >= 0) & (e <= 1))


def test_assign_treatment():
    zeros = np.zeros((10000, 20))
    assert abs(sb.assign_treatment(zeros, 3).mean() - 0.1192) < 0.01
    assert sb.assign_treatment(zeros, 3, intercept=-50).sum() == 0
    assert np.array_equal(sb.assign_treatment(zeros, 3), sb.assign_treatment(zeros, 3))


def test_outcome_fixtures():
    x0 = row()
    assert sb.mean_function("M1", x0, 0) == 2.455 == sb.mean_function("M1", x0, 1)
    assert sb.true_effect("M1", x0) == 0
    x1 = row(X1=1)
    assert sb.mean_function("M1", x1, 0) == pytest.approx(2.455 - 0.4, rel=1e-14)
    assert sb.true_effect("M1", x1) == pytest.approx(0.4, rel=1e-14)
    assert sb.true_effect("M2", x1) == pytest.approx(math.sin(0.4), rel=1e-14)
    # g > 0 switches the treated arm off by one unit
    xg = row(X2=2)
    assert sb.g(xg) == pytest.approx(.254 * 4)
    assert sb.mean_function("M1", xg, 1) == 2.455 - 1


def test_g_boundary_is_strict():
    x = row()
    assert sb.g(x) == 0 and sb.mean_function("M1", x, 1) == 2.455


def test_noise_and_sigma():
    x = sb.simulate_covariates(5000, 4)
    t = sb.assign_treatment(x, 5)
    y, tau = sb.outcome_and_truth("M3", x, t, 6, sigma=0.1)
    assert abs(np.std(y - sb.mean_function("M3", x, t)) - 0.1) < 0.005
    assert np.array_equal(tau, sb.true_effect("M3", x))
    with pytest.raises(ConfigurationError):
        sb.outcome_and_truth("M1", x, t, 6, sigma=0)


def test_simulate_bundle():
    sim = sb.simulate("M2", 300, 9)
    assert sim.dataset.n == 300 and sim.sigma == sb.DEFAULT_SIGMA
    assert np.array_equal(sim.true_propensity, sb.propensity(sim.dataset.x))
    other = sb.simulate("M2", 300, 9)
    assert np.array_equal(sim.dataset.y, other.dataset.y)


@pytest.mark.parametrize("model", ["M1", "M2", "M3"])
def test_ate_matches_quadrature(model):
    x = sb.simulate_covariates(1_000_000, 77)
    tau = sb.true_effect(model, x)
    se = tau.std() / 1000
    assert abs(tau.mean() - ate_by_quadrature(model)) < 4 * se


@pytest.mark.parametrize("col", [0, 1, 10, 11])
@pytest.mark.parametrize("model", ["M1", "M2", "M3"])
def test_confounders_enter_both_functions(model, col):
    x = sb.simulate_covariates(200, 3)
    bumped = x.copy()
    bumped[:, col] = 1 - bumped[:, col] if col >= 11 else bumped[:, col] + 0.7
    assert np.any(sb.linear_predictor(x) != sb.linear_predictor(bumped))
    t0 = np.zeros(200, int)
    assert np.any(sb.mean_function(model, x, t0) != sb.mean_function(model, bumped, t0))


# --- stratification ---------------------------------------------------------------

def test_strata_single_and_unit():
    e = np.linspace(0.01, 0.99, 100)
    assert np.all(sb.stratify_by_propensity(e, 1) == 1)
    assert np.array_equal(np.sort(sb.stratify_by_propensity(e[::-1], 100)), np.arange(1, 101))


def test_strata_balanced_and_ordered(rng):
    e = rng.random(103)
    s = sb.stratify_by_propensity(e, 10)
    counts = np.bincount(s)[1:]
    assert counts.max() - counts.min() <= 1
    order = np.argsort(e)
    assert np.all(np.diff(s[order]) >= 0)


def test_strata_ties_by_row_index():
    s = sb.stratify_by_propensity(np.full(6, 0.3), 3)
    assert s.tolist() == [1, 1, 2, 2, 3, 3]


# --- metrics ------------------------------------------------------------------

def test_metrics_exact_and_shifted(rng):
    reps = []
    for _ in range(3):
        tau = rng.standard_normal(40)
        reps.append((tau, tau, rng.random(40)))
    m = sb.conditional_metrics(reps, 4)
    assert np.all(m.bias == 0) and np.all(m.rmse == 0)
    m = sb.conditional_metrics([(t + 0.3, t, e) for _, t, e in reps], 4)
    assert np.allclose(m.bias, 0.3, rtol=1e-12) and np.allclose(m.rmse, 0.3, rtol=1e-12)


def test_metrics_hand_fixture():
    # two rows per replicate, M=2: the lower propensity row is stratum 1
    e = np.array([0.2, 0.7])
    reps = [(np.array([1.0, 2.0]), np.array([0.0, 0.0]), e),
            (np.array([3.0, -1.0]), np.array([1.0, 1.0]), e),
            (np.array([0.5, 0.0]), np.array([0.5, 2.0]), e)]
    m = sb.conditional_metrics(reps, 2)
    # stratum 1: errors 1, 2, 0  -> bias 1, rmse sqrt(5/3)
    # stratum 2: errors 2, -2, -2 -> bias -2/3, rmse 2
    assert m.bias == pytest.approx([1.0, -2 / 3], rel=1e-12)
    assert m.rmse == pytest.approx([math.sqrt(5 / 3), 2.0], rel=1e-12)
    assert m.stratum_counts.tolist() == [3, 3]


@pytest.mark.parametrize("seed", range(10))
def test_metrics_match_double_sum(seed):
    r = np.random.default_rng(seed)
    M = int(r.integers(1, 5))
    reps = []
    for _ in range(int(r.integers(1, 6))):
        n = int(r.integers(M, 41))
        reps.append((r.standard_normal(n), r.standard_normal(n), r.random(n)))
    m = sb.conditional_metrics(reps, M)
    bias, rmse = double_sum_metrics(reps, M)
    np.testing.assert_allclose(m.bias, bias, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(m.rmse, rmse, rtol=1e-12, atol=1e-12)


def test_metrics_skip_empty_strata(rng):
    reps = [(rng.standard_normal(3), np.zeros(3), rng.random(3)),
            (rng.standard_normal(8), np.zeros(8), rng.random(8))]
    m = sb.conditional_metrics(reps, 5)
    assert m.b_effective.tolist() == [2, 2, 1, 2, 1]   # n=3 fills strata 1, 2, 4
    bias, rmse = double_sum_metrics(reps, 5)
    np.testing.assert_allclose(m.rmse, rmse, rtol=1e-12)


# --- experiment runner -------------------------------------------------------------

TINY = dict(estimators=("vt",), n=100, B=2, M=10, n_trees=20)


def test_run_experiment_shape():
    res = sb.run_experiment(sb.ExperimentConfig(**TINY))
    assert len(res.table) == 30
    assert list(res.table.columns) == ["model", "estimator", "stratum", "bias", "rmse",
                                       "count", "B_effective"]
    assert (res.table.groupby("model").size() == 10).all()
    assert res.table["count"].sum() == 3 * 2 * 100


def test_run_experiment_deterministic():
    cfg = sb.ExperimentConfig(**TINY, models=("M3",))
    a = sb.run_experiment(cfg).table
    b = sb.run_experiment(cfg).table
    assert a.equals(b)


def test_run_experiment_parallel_matches_serial():
    cfg = sb.ExperimentConfig(**TINY, models=("M1",))
    a = sb.run_experiment(cfg).table
    b = sb.run_experiment(sb.ExperimentConfig(**{**TINY, "jobs": 2}, models=("M1",))).table
    assert a.equals(b)


def test_run_experiment_records_failures(monkeypatch):
    from iteforest.estimators import Method

    calls = {"n": 0}
    real = sb.ESTIMATORS[Method.VT]

    def flaky(data, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise ConfigurationError("boom")
        return real(data, **kw)

    monkeypatch.setitem(sb.ESTIMATORS, Method.VT, flaky)
    res = sb.run_experiment(sb.ExperimentConfig(**TINY, models=("M1",)))
    assert len(res.failures) == 1 and res.failures[0][:3] == ("M1", "vt", 0)
    assert res.summary.loc[0, "replicates"] == 1


def test_full_scale_expressible():
    for n, B in ((500, 1000), (5000, 250)):
        cfg = sb.ExperimentConfig(n=n, B=B, M=100)
        assert (cfg.n, cfg.B, cfg.M) == (n, B, 100)


def test_bad_config():
    with pytest.raises(ConfigurationError):
        sb.ExperimentConfig(estimators=("external",))
    with pytest.raises(ValueError):
        sb.ExperimentConfig(models=("M4",))
