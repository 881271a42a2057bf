"""Individual treatment effect estimators built on the forest engine.

Every estimator returns an :class:`IteResult`.  For the regression-surface
methods (VT, VT-I, CF, synCF) a training row's prediction under its own
treatment is out-of-bag, while the prediction under the other treatment is
an ordinary all-tree prediction for a point the forest never saw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import _kernels as K
from .bivariate import DEFAULT_ITERATIONS, impute_counterfactuals
from .data import Dataset
from .exceptions import ConfigurationError, IngestionError
from .forest import (Forest, ForestSpec, bootstrap_sample, derive_seed,
                     grow_forest, grow_trees, tree_rng)
from .synthetic import SyntheticSpec, grow_synthetic

logger = logging.getLogger(__name__)


class Method(str, Enum):
    VT = "vt"
    VT_I = "vt_i"
    CF = "cf"
    SYNCF = "syncf"
    BIVARIATE = "bivariate"
    HONEST = "honest"
    EXTERNAL = "external"


@dataclass(frozen=True)
class PredictedPair:
    y1_hat: float
    y0_hat: float
    y1_oob: bool
    y0_oob: bool


@dataclass
class IteResult:
    tau_hat: np.ndarray
    method: Method
    y1_hat: np.ndarray | None = None
    y0_hat: np.ndarray | None = None
    y1_oob: np.ndarray | None = None
    y0_oob: np.ndarray | None = None
    spec_used: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau_hat = np.asarray(self.tau_hat, dtype=np.float64)
        n = self.tau_hat.size
        if self.y1_oob is None:
            self.y1_oob = np.zeros(n, bool)
        if self.y0_oob is None:
            self.y0_oob = np.zeros(n, bool)

    @property
    def oob_flags(self) -> np.ndarray:
        """(n, 2) booleans; column j flags an OOB prediction under treatment j."""
        return np.column_stack([self.y0_oob, self.y1_oob])

    def pair(self, i: int) -> PredictedPair:
        return PredictedPair(float(self.y1_hat[i]), float(self.y0_hat[i]),
                             bool(self.y1_oob[i]), bool(self.y0_oob[i]))


def _combine(t, factual, factual_oob, counterfactual):
    treated = t == 1
    y1 = np.where(treated, factual, counterfactual)
    y0 = np.where(treated, counterfactual, factual)
    return y1, y0, treated & factual_oob, ~treated & factual_oob


def _spec_dict(spec) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()}


# --- virtual twins ----------------------------------------------------------

def vt_design(x, t, interaction: bool = False) -> np.ndarray:
    """[x, t] or [x, t, x * t]; interaction columns follow the given t."""
    t = np.asarray(t, dtype=np.float64)[:, None]
    cols = [x, t, x * t] if interaction else [x, t]
    return np.hstack(cols)


def _estimate_twins(data: Dataset, spec: ForestSpec | None, interaction: bool,
                    use_oob: bool, candidate_vars, threads) -> IteResult:
    data.require_both_arms()
    spec = spec or ForestSpec()
    design = vt_design(data.x, data.t, interaction)
    if spec.mtry is None:
        base = design.shape[1] if interaction else data.p
        spec = ForestSpec(spec.n_trees, math.ceil(base / 3), spec.nodesize, spec.seed)
    forest = grow_forest(design, data.y, spec, candidate_vars=candidate_vars,
                         threads=threads)
    if use_oob:
        oob = forest.predict_oob()
        factual, is_oob = oob.values, oob.oob
    else:
        factual, is_oob = forest.predict(design), np.zeros(data.n, bool)
    twin = forest.predict(vt_design(data.x, 1 - data.t, interaction))
    y1, y0, y1_oob, y0_oob = _combine(data.t, factual, is_oob, twin)
    method = Method.VT_I if interaction else Method.VT
    return IteResult(y1 - y0, method, y1, y0, y1_oob, y0_oob, _spec_dict(spec))


def estimate_vt(data: Dataset, spec: ForestSpec | None = None, *,
                use_oob: bool = True, candidate_vars=None,
                threads: int | None = None) -> IteResult:
    """Virtual twins: one forest on (x, t), queried with t flipped."""
    return _estimate_twins(data, spec, False, use_oob, candidate_vars, threads)


def estimate_vt_interaction(data: Dataset, spec: ForestSpec | None = None, *,
                            use_oob: bool = True, candidate_vars=None,
                            threads: int | None = None) -> IteResult:
    """Virtual twins on the design (x, t, x*t)."""
    return _estimate_twins(data, spec, True, use_oob, candidate_vars, threads)


# --- counterfactual forests -------------------------------------------------

def _estimate_per_arm(data: Dataset, fit, min_rows: int):
    data.require_both_arms(min_rows)
    factual = np.empty(data.n)
    is_oob = np.zeros(data.n, bool)
    counterfactual = np.empty(data.n)
    for arm in (0, 1):
        own = data.arm(arm)
        other = data.arm(1 - arm)
        model = fit(arm, data.x[own], data.y[own])
        oob = model.predict_oob()
        factual[own] = oob.values
        is_oob[own] = oob.oob
        counterfactual[other] = model.predict(data.x[other])
    return _combine(data.t, factual, is_oob, counterfactual)


def estimate_cf(data: Dataset, spec: ForestSpec | None = None, *,
                threads: int | None = None) -> IteResult:
    """Counterfactual RF: separate forests for the treated and the controls."""
    spec = spec or ForestSpec()

    def fit(arm, x, y):
        return grow_forest(x, y, spec.with_seed(derive_seed(spec.seed, arm)),
                           threads=threads)

    y1, y0, y1_oob, y0_oob = _estimate_per_arm(data, fit, spec.nodesize)
    return IteResult(y1 - y0, Method.CF, y1, y0, y1_oob, y0_oob, _spec_dict(spec))


def estimate_syncf(data: Dataset, spec: SyntheticSpec | None = None, *,
                   threads: int | None = None) -> IteResult:
    """Counterfactual synthetic forests, one per treatment arm."""
    spec = spec or SyntheticSpec()

    def fit(arm, x, y):
        arm_spec = replace(spec, seed=derive_seed(spec.seed, arm))
        return grow_synthetic(x, y, arm_spec, threads=threads)

    y1, y0, y1_oob, y0_oob = _estimate_per_arm(data, fit, 1)
    return IteResult(y1 - y0, Method.SYNCF, y1, y0, y1_oob, y0_oob, _spec_dict(spec))


# --- bivariate imputation ---------------------------------------------------

def estimate_bivariate(data: Dataset, spec: ForestSpec | None = None,
                       n_iterations: int = DEFAULT_ITERATIONS, *,
                       fallback: str = "ancestor",
                       threads: int | None = None) -> IteResult:
    """Difference of the completed potential-outcome pair of each row."""
    spec = spec or ForestSpec(nodesize=1)
    state = impute_counterfactuals(data, spec, n_iterations, fallback=fallback,
                                   threads=threads)
    y0, y1 = state.y_pair[:, 0], state.y_pair[:, 1]
    used = _spec_dict(spec) | {"n_iterations": n_iterations, "fallback": fallback}
    return IteResult(y1 - y0, Method.BIVARIATE, y1.copy(), y0.copy(),
                     spec_used=used)


# --- honest forest ----------------------------------------------------------

def _honest_halves(t, rng, max_attempts=100):
    n = t.size
    for _ in range(max_attempts):
        train = np.zeros(n, bool)
        train[rng.permutation(n)[: n // 2]] = True
        if all(np.any(t[m] == j) for m in (train, ~train) for j in (0, 1)):
            return train
    raise ConfigurationError("could not draw halves containing both arms")


def estimate_honest(data: Dataset, spec: ForestSpec | None = None, *,
                    per_tree_split: bool = False,
                    threads: int | None = None) -> IteResult:
    """Honest forest with a treatment-difference splitting rule.

    Trees are grown on a bootstrap of a random half of the data and their
    nodes repopulated with the other half; a node's effect is the difference
    of held-out arm means.  ``per_tree_split`` redraws the half per tree.
    """
    data.require_both_arms(2)
    spec = spec or ForestSpec(nodesize=1)
    n, p = data.x.shape
    spec.validate(n, p)
    rng = np.random.default_rng(derive_seed(spec.seed, 7))
    est_mask = np.empty((spec.n_trees, n), bool)
    inbag = np.zeros((spec.n_trees, n), np.int32)
    train = _honest_halves(data.t, rng)
    for k in range(spec.n_trees):
        if per_tree_split and k > 0:
            train = _honest_halves(data.t, rng)
        rows = np.flatnonzero(train)
        inbag[k, rows] = bootstrap_sample(rows.size, tree_rng(spec.seed, k))
        est_mask[k] = ~train
    y2 = np.ascontiguousarray(np.column_stack([data.y, data.y]))
    arrays, offsets, inbag = grow_trees(
        data.x, y2, np.ones((n, 2), bool), data.t, n_trees=spec.n_trees,
        mtry=spec.resolve_mtry(p), nodesize=spec.nodesize, seed=spec.seed,
        mode=K.MODE_TREATMENT, inbag=inbag, threads=threads)
    feature, threshold, left, right, _, count = arrays
    effect = K.honest_node_effects(feature, threshold, left, right, offsets,
                                   data.x, data.t, data.y, est_mask)
    forest = Forest(feature, threshold, left, right, effect, count, offsets,
                    inbag, spec, p, data.x)
    tau = forest.predict(data.x)
    used = _spec_dict(spec) | {"per_tree_split": per_tree_split}
    return IteResult(tau, Method.HONEST, spec_used=used)


# --- external predictions ---------------------------------------------------

def export_ite(result: IteResult | np.ndarray, path) -> None:
    """Write one value per line, shortest round-trip representation."""
    tau = result.tau_hat if isinstance(result, IteResult) else np.asarray(result)
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in tau))


def import_external_ite(path, n: int | None = None) -> IteResult:
    """Read a headerless one-value-per-line file of ITE predictions."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            v = float(line)
        except ValueError:
            raise IngestionError(f"{path}:{lineno}: not a number: {line!r}") from None
        if not math.isfinite(v):
            raise IngestionError(f"{path}:{lineno}: non-finite value")
        values.append(v)
    if n is not None and len(values) != n:
        raise IngestionError(f"{path}: expected {n} values, found {len(values)}")
    return IteResult(np.array(values), Method.EXTERNAL, spec_used={"source": str(path)})


ESTIMATORS = {
    Method.VT: estimate_vt,
    Method.VT_I: estimate_vt_interaction,
    Method.CF: estimate_cf,
    Method.SYNCF: estimate_syncf,
    Method.BIVARIATE: estimate_bivariate,
    Method.HONEST: estimate_honest,
}
