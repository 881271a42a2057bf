"""Dataset ingestion, subsampling inference on estimated ITEs, coplot export.

The subsampling procedure draws m = n/10 rows without replacement, fits an
ITE estimator on the subsample, and regresses the estimated effects on the
covariates by least squares.  Coefficient means over replicates are the
point estimates; their spread, rescaled by sqrt(m/n), gives standard errors.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from .data import Dataset
from .estimators import ESTIMATORS, Method
from .exceptions import ConfigurationError, InferenceError, IngestionError, SchemaError
from .forest import ForestSpec, derive_seed
from .synthetic import SyntheticSpec

logger = logging.getLogger(__name__)

Z_CRIT = 1.959963984540054
KINDS = ("numeric", "categorical", "ordinal")


# --- ingestion -----------------------------------------------------------------

@dataclass(frozen=True)
class Schema:
    """Column roles for a delimited dataset file.

    ``covariates`` maps column name to kind.  ``levels`` optionally fixes the
    level order of categorical (first level is the reference) and ordinal
    columns; otherwise levels are sorted.
    """

    treatment: str
    outcome: str
    covariates: dict
    levels: dict = field(default_factory=dict)
    delimiter: str = ","

    def __post_init__(self):
        for name, kind in self.covariates.items():
            if kind not in KINDS:
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")

    @classmethod
    def from_json(cls, path) -> "Schema":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(doc["treatment"], doc["outcome"], dict(doc["covariates"]),
                       dict(doc.get("levels", {})), doc.get("delimiter", ","))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: bad schema document: {exc}") from None

    def to_json(self, path) -> None:
        doc = {"treatment": self.treatment, "outcome": self.outcome,
               "covariates": self.covariates, "levels": self.levels,
               "delimiter": self.delimiter}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _number(text, row, col):
    try:
        v = float(text)
    except ValueError:
        raise IngestionError(f"row {row}, column {col!r}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise IngestionError(f"row {row}, column {col!r}: non-finite value")
    return v


def load_dataset(path, schema: Schema | str | Path) -> Dataset:
    """Read a header + delimited file into a Dataset.

    Categorical columns become indicator columns named ``col=level`` with
    the reference level dropped; ordinal columns are coded 0, 1, 2, ...  Row
    numbers in error messages count data rows from 1.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_json(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        records = [r for r in reader if r]
    index = {name: j for j, name in enumerate(header)}
    for name in [schema.treatment, schema.outcome, *schema.covariates]:
        if name not in index:
            raise IngestionError(f"{path}: unknown column {name!r}")
    for i, rec in enumerate(records, 1):
        if len(rec) != len(header):
            raise IngestionError(f"row {i}: expected {len(header)} fields, found {len(rec)}")

    def column(name):
        return [rec[index[name]].strip() for rec in records]

    t = []
    for i, v in enumerate(column(schema.treatment), 1):
        if v == "":
            raise IngestionError(f"row {i}, column {schema.treatment!r}: missing treatment")
        f = _number(v, i, schema.treatment)
        if f not in (0.0, 1.0):
            raise IngestionError(f"row {i}, column {schema.treatment!r}: treatment must be 0 or 1, got {v}")
        t.append(int(f))
    y = []
    for i, v in enumerate(column(schema.outcome), 1):
        if v == "":
            raise IngestionError(f"row {i}, column {schema.outcome!r}: missing outcome")
        y.append(_number(v, i, schema.outcome))

    cols, names = [], []
    for name, kind in schema.covariates.items():
        values = column(name)
        for i, v in enumerate(values, 1):
            if v == "":
                raise IngestionError(f"row {i}, column {name!r}: missing value")
        if kind == "numeric":
            cols.append([_number(v, i, name) for i, v in enumerate(values, 1)])
            names.append(name)
            continue
        levels = [str(v) for v in schema.levels.get(name, sorted(set(values)))]
        code = {lev: k for k, lev in enumerate(levels)}
        for i, v in enumerate(values, 1):
            if v not in code:
                raise IngestionError(f"row {i}, column {name!r}: unknown level {v!r}")
        codes = np.array([code[v] for v in values])
        if kind == "ordinal":
            cols.append(codes.astype(np.float64))
            names.append(name)
        else:
            for k, lev in enumerate(levels[1:], 1):
                cols.append((codes == k).astype(np.float64))
                names.append(f"{name}={lev}")
    if not cols:
        raise IngestionError(f"{path}: schema names no covariates")
    x = np.column_stack(cols) if records else np.empty((0, len(cols)))
    try:
        return Dataset(x, np.array(t, np.int8), np.array(y), feature_names=tuple(names))
    except SchemaError as exc:
        raise IngestionError(f"{path}: {exc}") from None


def export_dataset(data: Dataset, path, schema_path=None, *,
                   treatment: str = "T", outcome: str = "Y") -> Schema:
    """Write a Dataset as CSV (shortest round-trip floats) plus a JSON schema."""
    names = list(data.names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + [treatment, outcome])
        for i in range(data.n):
            w.writerow([repr(float(v)) for v in data.x[i]] + [int(data.t[i]), repr(float(data.y[i]))])
    schema = Schema(treatment, outcome, {name: "numeric" for name in names})
    if schema_path is not None:
        schema.to_json(schema_path)
    return schema


# --- subsampling inference ------------------------------------------------------

EstimatorHook = Callable[[Dataset, int], np.ndarray]


@dataclass(frozen=True)
class InferenceConfig:
    subsample_fraction: float = 0.1
    n_replicates: int = 1000
    method: str = "syncf"
    spec: ForestSpec | SyntheticSpec | None = None
    response: str = "tau_hat"
    rescale: bool = True
    max_resample: int = 100
    max_drop_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.subsample_fraction < 1:
            raise ConfigurationError("subsample_fraction must lie in (0, 1)")
        if self.n_replicates < 2:
            raise ConfigurationError("n_replicates must be at least 2")
        if self.response not in ("tau_hat", "y1_hat", "y0_hat"):
            raise ConfigurationError(f"unknown response {self.response!r}")
        Method(self.method)

    def subsample_size(self, n: int) -> int:
        return int(math.floor(self.subsample_fraction * n))


@dataclass
class CoefficientTable:
    terms: list[str]
    estimate: np.ndarray
    std_error: np.ndarray
    n_used: np.ndarray
    n_replicates: int
    n_dropped: int
    m: int
    n: int
    rescaled: bool

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.std_error > 0, self.estimate / self.std_error, np.nan)

    @property
    def significant(self) -> np.ndarray:
        return np.abs(self.z) > Z_CRIT

    def interval(self, term: str | int = 0) -> tuple[float, float]:
        """Normal 95% interval for one coefficient."""
        k = self.terms.index(term) if isinstance(term, str) else term
        half = Z_CRIT * self.std_error[k]
        return float(self.estimate[k] - half), float(self.estimate[k] + half)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"term": self.terms, "estimate": self.estimate,
                             "std_error": self.std_error, "z": self.z,
                             "significant": self.significant})

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "estimate", "std_error", "z", "significant"])
            for k, term in enumerate(self.terms):
                w.writerow([term, repr(float(self.estimate[k])), repr(float(self.std_error[k])),
                            repr(float(self.z[k])), str(bool(self.significant[k])).lower()])


def ols_coefficients(x, y, tol: float = 1e-10):
    """Least squares of y on [1, x] with constant columns dropped.

    Returns (coef, kept) where ``coef`` has NaN at dropped columns and
    ``kept`` flags the columns used.  Raises np.linalg.LinAlgError when the
    remaining design is rank deficient.
    """
    x = np.asarray(x, dtype=np.float64)
    kept = np.ones(x.shape[1] + 1, bool)
    kept[1:] = np.ptp(x, axis=0) > 0
    design = np.column_stack([np.ones(len(y)), x[:, kept[1:]]])
    sol, _, rank, sv = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1] or sv[-1] <= tol * sv[0]:
        raise np.linalg.LinAlgError("rank-deficient design")
    coef = np.full(kept.size, np.nan)
    coef[kept] = sol
    return coef, kept


def default_hook(config: InferenceConfig) -> EstimatorHook:
    method = Method(config.method)
    if method is Method.EXTERNAL:
        raise ConfigurationError("external predictions cannot be refit on subsamples")
    fit = ESTIMATORS[method]

    def hook(data: Dataset, seed: int) -> np.ndarray:
        if method is Method.SYNCF:
            spec = config.spec or SyntheticSpec()
        else:
            spec = config.spec or ForestSpec(nodesize=1 if method in (Method.HONEST, Method.BIVARIATE) else 3)
        res = fit(data, spec=_reseed(spec, seed))
        return getattr(res, config.response)

    return hook


def _reseed(spec, seed):
    return replace(spec, seed=seed)


def identity_hook(data: Dataset, seed: int) -> np.ndarray:
    """Test hook: the outcome itself is the effect estimate."""
    return data.y


def _draw(data: Dataset, m: int, rng, max_resample: int, min_arm: int = 2) -> np.ndarray:
    for _ in range(max_resample):
        rows = np.sort(rng.choice(data.n, size=m, replace=False))
        treated = int(data.t[rows].sum())
        if min(treated, m - treated) >= min_arm:
            return rows
    raise InferenceError(f"no subsample of size {m} with both arms after {max_resample} draws")


def subsample_inference(data: Dataset, config: InferenceConfig = InferenceConfig(),
                        estimator: EstimatorHook | None = None) -> CoefficientTable:
    """Regress subsample effect estimates on covariates and pool over replicates."""
    n, p = data.n, data.p
    m = config.subsample_size(n)
    if m < p + 2:
        raise ConfigurationError(f"subsample size {m} too small for {p} covariates")
    hook = estimator or default_hook(config)
    coefs = np.full((config.n_replicates, p + 1), np.nan)
    dropped = 0
    for r in range(config.n_replicates):
        rng = np.random.default_rng(derive_seed(config.seed, r))
        rows = _draw(data, m, rng, config.max_resample)
        sub = data.subset(rows)
        tau = np.asarray(hook(sub, derive_seed(config.seed, r, 1)), dtype=np.float64)
        try:
            coefs[r], kept = ols_coefficients(sub.x, tau)
        except np.linalg.LinAlgError:
            dropped += 1
            logger.info("replicate %d dropped: singular design", r)
            continue
        if not kept.all():
            logger.info("replicate %d: constant columns dropped: %s", r,
                        [data.names[j - 1] for j in np.flatnonzero(~kept)])
    if dropped > config.max_drop_fraction * config.n_replicates:
        raise InferenceError(f"{dropped} of {config.n_replicates} replicates had singular designs")
    ok = ~np.isnan(coefs)
    n_used = ok.sum(axis=0)
    estimate = np.array([coefs[ok[:, k], k].mean() if n_used[k] else np.nan
                         for k in range(p + 1)])
    sd = np.array([coefs[ok[:, k], k].std(ddof=1) if n_used[k] > 1 else np.nan
                   for k in range(p + 1)])
    if config.rescale:
        sd = sd * math.sqrt(m / n)
    terms = ["(intercept)"] + list(data.names)
    return CoefficientTable(terms, estimate, sd, n_used, config.n_replicates,
                            dropped, m, n, config.rescale)


# --- coplot export --------------------------------------------------------------

def _bins(values, bins: int, overlap: float, name: str):
    """Interval labels per row (a list of label lists when bins overlap)."""
    levels = np.unique(values)
    if levels.size == 1:
        warnings.warn(f"conditioning variable {name!r} is constant; using one stratum",
                      stacklevel=3)
        return [[f"{name}={levels[0]:g}"] for _ in values]
    if levels.size <= bins:
        return [[f"{name}={v:g}"] for v in values]
    qs = np.quantile(values, np.linspace(0, 1, bins + 1))
    width = np.diff(qs)
    lo = qs[:-1] - overlap * width
    hi = qs[1:] + overlap * width
    labels = [f"{name}[{a:.4g},{b:.4g}]" for a, b in zip(qs[:-1], qs[1:])]
    out = []
    for v in values:
        if overlap > 0:
            out.append([labels[k] for k in range(bins) if lo[k] <= v <= hi[k]])
        else:
            k = min(int(np.searchsorted(qs, v, side="right")) - 1, bins - 1)
            out.append([labels[k]])
    return out


def coplot_export(tau_hat, data: Dataset, x_var: str, panel_var: str | None = None,
                  cond_vertical: str | None = None, cond_horizontal: str | None = None,
                  bins: int = 4, overlap: float = 0.0, path=None) -> pd.DataFrame:
    """Long-format conditioning-plot records (stratum_v, stratum_h, panel, x, tau_hat).

    Continuous conditioning variables are cut into ``bins`` quantile bins;
    ``overlap`` > 0 widens each bin by that fraction of its width on both
    sides, so rows may appear in more than one stratum.
    """
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_hat.shape != (data.n,):
        raise SchemaError("tau_hat length does not match the dataset")
    if bins < 1 or overlap < 0:
        raise ConfigurationError("bins must be positive and overlap non-negative")
    names = list(data.names)

    def col(name):
        if name is None:
            return None
        if name not in names:
            raise SchemaError(f"unknown variable {name!r}")
        return data.x[:, names.index(name)]

    xv = col(x_var)
    pv = col(panel_var)
    sv = _bins(col(cond_vertical), bins, overlap, cond_vertical) if cond_vertical else [["all"]] * data.n
    sh = _bins(col(cond_horizontal), bins, overlap, cond_horizontal) if cond_horizontal else [["all"]] * data.n
    rows = []
    for i in range(data.n):
        panel = "all" if pv is None else f"{panel_var}={pv[i]:g}"
        for a in sv[i]:
            for b in sh[i]:
                rows.append((a, b, panel, xv[i], tau_hat[i]))
    frame = pd.DataFrame(rows, columns=["stratum_v", "stratum_h", "panel", "x", "tau_hat"])
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(frame.columns)
            for r in rows:
                w.writerow([r[0], r[1], r[2], repr(float(r[3])), repr(float(r[4]))])
    return frame
