"""Simulation models with known treatment effects and stratified metrics.

Covariates: X1..X11 standard normal, X12..X20 Bernoulli(0.5).  Treatment is
logistic in a linear predictor F(X).  Three outcome surfaces share the same
confounders; the propensity strata used for evaluation come from the true
propensity.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from .data import Dataset
from .estimators import ESTIMATORS, Method
from .exceptions import ConfigurationError
from .forest import ForestSpec, derive_seed, set_threads
from .synthetic import SyntheticSpec

logger = logging.getLogger(__name__)

P = 20
N_NORMAL = 11
DEFAULT_SIGMA = 0.1
DEFAULT_STRATA = 100


class SimModel(str, Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"


@dataclass(frozen=True)
class SimulatedData:
    dataset: Dataset
    true_tau: np.ndarray
    true_propensity: np.ndarray
    model: SimModel
    sigma: float


# --- generating functions ----------------------------------------------------
# Columns are 0-based: X1 is x[:, 0].

def simulate_covariates(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = np.empty((n, P))
    x[:, :N_NORMAL] = rng.standard_normal((n, N_NORMAL))
    x[:, N_NORMAL:] = rng.integers(0, 2, size=(n, P - N_NORMAL))
    return x


def linear_predictor(x, intercept: float = -2.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (intercept + .028 * x[..., 0] - .374 * x[..., 1] - .03 * x[..., 2]
            + .118 * x[..., 3] - 0.394 * x[..., 10] + 0.875 * x[..., 11]
            + 0.9 * x[..., 12])


def propensity(x, intercept: float = -2.0) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-linear_predictor(x, intercept)))


def assign_treatment(x, seed: int, intercept: float = -2.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    e = propensity(x, intercept)
    return (rng.random(e.shape) < e).astype(np.int8)


def g(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return .254 * x[..., 1] ** 2 - .152 * x[..., 10] - .4 * x[..., 10] ** 2 - .126 * x[..., 11]


def h(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return .254 * x[..., 2] ** 2 - .152 * x[..., 3] - .126 * x[..., 4] - .4 * x[..., 4] ** 2


def _control_index(x):
    return .4 * x[..., 0] + .154 * x[..., 1] - .152 * x[..., 10] - .126 * x[..., 11]


def mean_function(model: SimModel | str, x, t) -> np.ndarray:
    """f_j(x, t) for model j."""
    model = SimModel(model)
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t)
    lin = _control_index(x)
    control_term = lin if model is SimModel.M1 else np.sin(lin)
    active = (h(x) if model is SimModel.M3 else g(x)) > 0
    return 2.455 - (t == 0) * control_term - ((t == 1) & active)


def true_effect(model: SimModel | str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape[:-1]
    return mean_function(model, x, np.ones(shape, int)) - mean_function(model, x, np.zeros(shape, int))


def outcome_and_truth(model: SimModel | str, x, t, seed: int,
                      sigma: float = DEFAULT_SIGMA):
    if sigma <= 0:
        raise ConfigurationError("sigma must be positive")
    rng = np.random.default_rng(seed)
    y = mean_function(model, x, t) + sigma * rng.standard_normal(len(t))
    return y, true_effect(model, x)


def simulate(model: SimModel | str, n: int, seed: int,
             sigma: float = DEFAULT_SIGMA) -> SimulatedData:
    """Covariates, treatment and outcome from independent child streams."""
    model = SimModel(model)
    x = simulate_covariates(n, derive_seed(seed, 0))
    t = assign_treatment(x, derive_seed(seed, 1))
    y, tau = outcome_and_truth(model, x, t, derive_seed(seed, 2), sigma)
    names = tuple(f"X{j + 1}" for j in range(P))
    return SimulatedData(Dataset(x, t, y, feature_names=names), tau,
                         propensity(x), model, sigma)


# --- stratified metrics -------------------------------------------------------

def stratify_by_propensity(e, M: int) -> np.ndarray:
    """Stratum label in 1..M from empirical quantiles; ties broken by row order."""
    e = np.asarray(e, dtype=np.float64)
    if M < 1:
        raise ConfigurationError("M must be at least 1")
    n = e.size
    order = np.lexsort((np.arange(n), e))
    rank = np.empty(n, np.int64)
    rank[order] = np.arange(n)
    return rank * M // n + 1


@dataclass
class StratifiedMetrics:
    M: int
    bias: np.ndarray
    rmse: np.ndarray
    stratum_counts: np.ndarray
    b_effective: np.ndarray

    @property
    def aggregate_rmse(self) -> float:
        """Mean of the per-stratum RMSE values."""
        return float(np.nanmean(self.rmse))

    @property
    def aggregate_abs_bias(self) -> float:
        return float(np.nanmean(np.abs(self.bias)))


def replicate_stratum_stats(tau_hat, tau, e, M: int):
    """Per-stratum mean estimate, mean truth, mean squared error and count."""
    s = stratify_by_propensity(e, M) - 1
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    count = np.bincount(s, minlength=M)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.bincount(s, tau_hat, minlength=M) / count
        truth = np.bincount(s, tau, minlength=M) / count
        mse = np.bincount(s, (tau_hat - tau) ** 2, minlength=M) / count
    return est, truth, mse, count


def metrics_from_stats(stats, M: int) -> StratifiedMetrics:
    """Average per-replicate stratum statistics; empty strata are skipped."""
    est = np.array([s[0] for s in stats]).reshape(-1, M)
    truth = np.array([s[1] for s in stats]).reshape(-1, M)
    mse = np.array([s[2] for s in stats]).reshape(-1, M)
    count = np.array([s[3] for s in stats]).reshape(-1, M)
    present = count > 0
    b_eff = present.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        bias = (np.where(present, est, 0).sum(0) - np.where(present, truth, 0).sum(0)) / b_eff
        rmse = np.sqrt(np.where(present, mse, 0).sum(0) / b_eff)
    return StratifiedMetrics(M, bias, rmse, count.sum(axis=0), b_eff)


def conditional_metrics(replicates, M: int) -> StratifiedMetrics:
    """Propensity-stratified bias and RMSE over replicates.

    ``replicates`` is a sequence of (tau_hat, true_tau, propensity) triples.
    Stratum means are taken first, then averaged over replicates.
    """
    stats = [replicate_stratum_stats(a, b, c, M) for a, b, c in replicates]
    return metrics_from_stats(stats, M)


# --- experiment runner ---------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[str, ...] = ("M1", "M2", "M3")
    estimators: tuple[str, ...] = ("vt", "vt_i", "cf", "syncf", "bivariate", "honest")
    n: int = 500
    B: int = 50
    M: int = 20
    sigma: float = DEFAULT_SIGMA
    seed: int = 0
    n_trees: int = 1000
    nodesize: int = 3
    honest_nodesize: int = 1
    bivariate_nodesize: int = 1
    bivariate_iterations: int = 5
    nodesize_grid: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 30, 50, 100)
    mtry_grid: tuple[int, ...] = (1, 10, 20)
    base_n_trees: int = 250
    jobs: int = 1

    def __post_init__(self):
        for m in self.models:
            SimModel(m)
        for e in self.estimators:
            if Method(e) not in ESTIMATORS:
                raise ConfigurationError(f"unknown estimator {e!r}")
        if self.n < 4 or self.B < 1 or self.M < 1:
            raise ConfigurationError("need n >= 4, B >= 1, M >= 1")

    def estimator_kwargs(self, method: Method, seed: int) -> dict:
        if method is Method.SYNCF:
            return {"spec": SyntheticSpec(self.nodesize_grid, self.mtry_grid,
                                          self.base_n_trees, self.n_trees, seed=seed)}
        if method is Method.BIVARIATE:
            return {"spec": ForestSpec(self.n_trees, None, self.bivariate_nodesize, seed),
                    "n_iterations": self.bivariate_iterations}
        if method is Method.HONEST:
            return {"spec": ForestSpec(self.n_trees, None, self.honest_nodesize, seed)}
        return {"spec": ForestSpec(self.n_trees, None, self.nodesize, seed)}


def run_replicate(config: ExperimentConfig, model: str, b: int):
    """Simulate replicate b once and apply every estimator to the same data."""
    rep_seed = config.seed + b
    sim = simulate(model, config.n, rep_seed, config.sigma)
    out = {}
    for name in config.estimators:
        method = Method(name)
        est_seed = derive_seed(rep_seed, 100 + list(Method).index(method))
        try:
            res = ESTIMATORS[method](sim.dataset, **config.estimator_kwargs(method, est_seed))
            out[name] = replicate_stratum_stats(res.tau_hat, sim.true_tau,
                                                sim.true_propensity, config.M)
        except Exception as exc:  # recorded, replicate excluded
            logger.warning("%s/%s replicate %d failed: %s", model, name, b, exc)
            out[name] = exc
    return out


def _run_task(args):
    config, model, b = args
    set_threads(1)
    return model, b, run_replicate(config, model, b)


@dataclass
class ExperimentResult:
    table: pd.DataFrame
    summary: pd.DataFrame
    metrics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every (model, estimator, replicate) cell and tabulate metrics."""
    tasks = [(config, m, b) for m in config.models for b in range(config.B)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            done = list(pool.map(_run_task, tasks))
    else:
        done = [(m, b, run_replicate(config, m, b)) for _, m, b in tasks]
    done.sort(key=lambda r: (config.models.index(r[0]), r[1]))

    rows, summary, metrics, failures = [], [], {}, []
    for model in config.models:
        for name in config.estimators:
            stats = []
            for m, b, res in done:
                if m != model:
                    continue
                if isinstance(res[name], Exception):
                    failures.append((model, name, b, repr(res[name])))
                else:
                    stats.append(res[name])
            if not stats:
                continue
            met = metrics_from_stats(stats, config.M)
            metrics[(model, name)] = met
            for k in range(config.M):
                rows.append({"model": model, "estimator": name, "stratum": k + 1,
                             "bias": met.bias[k], "rmse": met.rmse[k],
                             "count": int(met.stratum_counts[k]),
                             "B_effective": int(met.b_effective[k])})
            summary.append({"model": model, "estimator": name,
                            "mean_rmse": met.aggregate_rmse,
                            "mean_abs_bias": met.aggregate_abs_bias,
                            "median_rmse": float(np.nanmedian(met.rmse)),
                            "replicates": len(stats)})
    return ExperimentResult(pd.DataFrame(rows), pd.DataFrame(summary), metrics, failures)


def analytic_ate(model: SimModel | str, n_mc: int = 2_000_000, seed: int = 12345) -> float:
    """Monte-Carlo ATE of a simulation model (ignores treatment assignment)."""
    x = simulate_covariates(n_mc, seed)
    return float(np.mean(true_effect(model, x)))
