"""Two-stage synthetic forests.

A grid of base-learner forests, each tuned with a different (nodesize,
mtry) pair, produces one synthetic feature apiece.  A final forest is then
grown on the original covariates plus those features.  Every stage reuses
one bootstrap plan per tree index, so "row i is out-of-bag for tree t" means
the same thing everywhere.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

from .exceptions import ConfigurationError, SchemaError
from .forest import Forest, ForestSpec, bootstrap_plan, grow_forest, predict_oob

DEFAULT_NODESIZE_GRID = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 30, 50, 100)
DEFAULT_MTRY_GRID = (1, 10, 20)


@dataclass(frozen=True)
class SyntheticSpec:
    nodesize_grid: tuple[int, ...] = DEFAULT_NODESIZE_GRID
    mtry_grid: tuple[int, ...] = DEFAULT_MTRY_GRID
    base_n_trees: int = 250
    final_n_trees: int = 1000
    final_mtry: int | None = None
    final_nodesize: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.nodesize_grid or not self.mtry_grid:
            raise ConfigurationError("synthetic grids must be non-empty")
        if self.base_n_trees < 1 or self.final_n_trees < 1:
            raise ConfigurationError("tree counts must be positive")
        object.__setattr__(self, "nodesize_grid", tuple(int(v) for v in self.nodesize_grid))
        object.__setattr__(self, "mtry_grid", tuple(int(v) for v in self.mtry_grid))

    @property
    def n_learners(self) -> int:
        return len(self.nodesize_grid) * len(self.mtry_grid)

    def grid(self) -> list[tuple[int, int]]:
        """(nodesize, mtry) for each base learner, in feature-column order."""
        return list(product(self.nodesize_grid, self.mtry_grid))


@dataclass
class SyntheticForest:
    base_learners: list[Forest]
    final_forest: Forest
    shared_inbag: np.ndarray
    synthetic_train: np.ndarray
    spec: SyntheticSpec

    @property
    def n_features(self) -> int:
        return self.base_learners[0].n_features

    def synthetic_features(self, x) -> np.ndarray:
        """Base-learner predictions (all trees) for new rows."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} covariates")
        return np.column_stack([f.predict(x) for f in self.base_learners])

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.final_forest.predict(np.hstack([x, self.synthetic_features(x)]))

    def predict_oob(self, fallback: bool = True):
        """OOB prediction of every training row, using only its OOB trees."""
        return self.final_forest.predict_oob(fallback=fallback)


def _clamped_grid(spec: SyntheticSpec, n: int, p: int) -> list[tuple[int, int]]:
    grid = []
    for nodesize, mtry in spec.grid():
        if nodesize > n or mtry > p:
            warnings.warn(
                f"synthetic grid point (nodesize={nodesize}, mtry={mtry}) clamped "
                f"to n={n}, p={p}", stacklevel=3)
        grid.append((min(nodesize, n), min(mtry, p)))
    return grid


def grow_synthetic(x, y, spec: SyntheticSpec = SyntheticSpec(), *,
                   threads: int | None = None) -> SyntheticForest:
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    n_plan = max(spec.base_n_trees, spec.final_n_trees)
    plan = bootstrap_plan(n, n_plan, spec.seed)

    learners = []
    features = np.empty((n, spec.n_learners))
    for k, (nodesize, mtry) in enumerate(_clamped_grid(spec, n, p)):
        fspec = ForestSpec(spec.base_n_trees, mtry, nodesize, spec.seed)
        forest = grow_forest(x, y, fspec, inbag=plan[:spec.base_n_trees],
                             stream=k + 1, threads=threads)
        learners.append(forest)
        features[:, k] = forest.predict_oob().values

    q = p + spec.n_learners
    final_mtry = spec.final_mtry or math.ceil(q / 3)
    fspec = ForestSpec(spec.final_n_trees, min(final_mtry, q),
                       min(spec.final_nodesize, n), spec.seed)
    final = grow_forest(np.hstack([x, features]), y, fspec,
                        inbag=plan[:spec.final_n_trees], stream=0, threads=threads)
    return SyntheticForest(learners, final, plan, features, spec)


def predict_synthetic(sf: SyntheticForest, x, oob_for: int | None = None):
    """Prediction for a new row, or the OOB prediction of training row ``oob_for``.

    Returns a float for a single row.  With ``oob_for`` the second element of
    the returned pair is the number of final-forest trees used.
    """
    if oob_for is None:
        out = sf.predict(x)
        return float(out[0]) if np.ndim(x) == 1 else out
    return predict_oob(sf.final_forest, oob_for)
