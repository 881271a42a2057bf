"""Dataset container shared by every estimator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, SchemaError


@dataclass(frozen=True)
class Dataset:
    """Covariates ``x`` (n x p), binary treatment ``t`` and outcome ``y``.

    ``missing_mask`` is an optional n x 2 boolean array flagging unobserved
    potential outcomes (column j = outcome under treatment j).  Only the
    bivariate imputer looks at it.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    missing_mask: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise SchemaError("x must be a 2-d array")
        n, p = x.shape
        t = np.asarray(self.t)
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if n < 2 or p < 1:
            raise SchemaError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if t.shape != (n,) or y.shape != (n,):
            raise SchemaError("t and y must be length-n vectors")
        if not np.all(np.isfinite(x)):
            raise SchemaError("x contains non-finite values")
        if not np.all((t == 0) | (t == 1)):
            raise SchemaError("treatment must be coded 0/1")
        t = t.astype(np.int8)
        mask = self.missing_mask
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (n, 2):
                raise SchemaError("missing_mask must be n x 2")
        observed = np.ones(n, bool) if mask is None else ~mask[np.arange(n), t]
        if not np.all(np.isfinite(y[observed])):
            raise SchemaError("y contains non-finite observed values")
        if self.feature_names is not None and len(self.feature_names) != p:
            raise SchemaError("feature_names length does not match p")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "missing_mask", mask)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j + 1}" for j in range(self.p))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        mask = None if self.missing_mask is None else self.missing_mask[rows]
        return Dataset(self.x[rows], self.t[rows], self.y[rows], mask, self.feature_names)

    def arm(self, j: int) -> np.ndarray:
        """Row indices with treatment ``j``."""
        return np.flatnonzero(self.t == j)

    def require_both_arms(self, min_rows: int = 1) -> None:
        for j in (0, 1):
            k = int(np.sum(self.t == j))
            if k < min_rows:
                raise ConfigurationError(
                    f"treatment arm {j} has {k} rows, need at least {min_rows}")
