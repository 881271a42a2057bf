"""Bagged CART regression forests with out-of-bag bookkeeping."""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .exceptions import ConfigurationError, NoOOBTreesError, SchemaError

logger = logging.getLogger(__name__)

_threads = os.cpu_count() or 1


def set_threads(n: int | None) -> None:
    """Set the default number of threads used to grow trees."""
    global _threads
    _threads = max(1, int(n)) if n else (os.cpu_count() or 1)


def get_threads() -> int:
    return _threads


@dataclass(frozen=True)
class ForestSpec:
    """Forest tuning bundle.  ``mtry=None`` means ceil(p / 3)."""

    n_trees: int = 1000
    mtry: int | None = None
    nodesize: int = 3
    seed: int = 0

    def resolve_mtry(self, p: int) -> int:
        return default_mtry(p) if self.mtry is None else int(self.mtry)

    def validate(self, n: int, p: int) -> None:
        if self.n_trees < 1:
            raise ConfigurationError("n_trees must be positive")
        if self.nodesize < 1:
            raise ConfigurationError("nodesize must be positive")
        if self.nodesize > n:
            raise ConfigurationError(f"nodesize={self.nodesize} exceeds n={n}")
        mtry = self.resolve_mtry(p)
        if not 1 <= mtry <= p:
            raise ConfigurationError(f"mtry={mtry} outside [1, {p}]")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    def with_seed(self, seed: int) -> "ForestSpec":
        return replace(self, seed=int(seed))


def default_mtry(p: int) -> int:
    return max(1, math.ceil(p / 3))


# --- random streams -------------------------------------------------------

def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for a sub-component keyed by integers."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def tree_rng(seed: int, tree: int) -> np.random.Generator:
    """Generator keyed by (seed, tree index); drives the bootstrap."""
    return np.random.default_rng([int(seed), int(tree)])


def split_seed(seed: int, tree: int, stream: int = 0) -> int:
    """32-bit seed for the in-kernel variable sampler of one tree."""
    ss = np.random.SeedSequence([int(seed), int(tree), 1, int(stream)])
    return int(ss.generate_state(1, np.uint32)[0])


def bootstrap_sample(n: int, rng: np.random.Generator) -> np.ndarray:
    """In-bag multiplicities of a size-n bootstrap draw with replacement."""
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.int32)


def bootstrap_plan(n: int, n_trees: int, seed: int) -> np.ndarray:
    """(n_trees, n) matrix of in-bag counts; row t depends only on (seed, t)."""
    plan = np.empty((n_trees, n), np.int32)
    for t in range(n_trees):
        plan[t] = bootstrap_sample(n, tree_rng(seed, t))
    return plan


# --- structures -------------------------------------------------------------

@dataclass(frozen=True)
class Tree:
    """Read-only view of one tree of a forest."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    inbag_counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros(x.shape[0], np.int64)
        active = np.ones(x.shape[0], bool)
        while active.any():
            node = out[active]
            feat = self.feature[node]
            internal = feat >= 0
            idx = np.flatnonzero(active)[internal]
            node = node[internal]
            go_left = x[idx, self.feature[node]] <= self.threshold[node]
            out[idx] = np.where(go_left, self.left[node], self.right[node])
            active[:] = False
            active[idx] = True
        return out

    def member_rows(self, x_train: np.ndarray) -> dict[int, np.ndarray]:
        """In-bag training rows landing in each leaf."""
        leaf = self.apply(x_train)
        rows = np.flatnonzero(self.inbag_counts > 0)
        return {int(k): rows[leaf[rows] == k] for k in self.leaves}


@dataclass
class Forest:
    """A grown forest stored as concatenated flat node arrays."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    offsets: np.ndarray
    inbag: np.ndarray
    spec: ForestSpec
    n_features: int
    x_train: np.ndarray = field(repr=False)
    fingerprint: str = ""

    @property
    def n_trees(self) -> int:
        return self.offsets.size - 1

    @property
    def trees(self) -> list[Tree]:
        return [self.tree(t) for t in range(self.n_trees)]

    def tree(self, t: int) -> Tree:
        a, b = self.offsets[t], self.offsets[t + 1]
        return Tree(self.feature[a:b], self.threshold[a:b], self.left[a:b],
                    self.right[a:b], self.value[a:b], self.count[a:b],
                    self.inbag[t])

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise SchemaError(
                f"expected {self.n_features} covariates, got shape {x.shape}")
        return np.ascontiguousarray(x)

    def apply(self, x) -> np.ndarray:
        """Global leaf index per (tree, row)."""
        return K.apply_forest(self.feature, self.threshold, self.left,
                              self.right, self.offsets, self._check(x))

    def predict(self, x) -> np.ndarray:
        x = self._check(x)
        sums, counts = K.predict_forest(self.feature, self.threshold, self.left,
                                        self.right, self.value, self.offsets, x,
                                        self.inbag, False)
        return sums / counts

    def predict_oob(self, fallback: bool = True) -> "OOBPrediction":
        """OOB predictions for every training row.

        Rows that are in-bag for every tree get the all-tree prediction when
        ``fallback`` is set (flagged ``oob=False``); otherwise they raise.
        """
        sums, counts = K.predict_forest(self.feature, self.threshold, self.left,
                                        self.right, self.value, self.offsets,
                                        self.x_train, self.inbag, True)
        oob = counts > 0
        values = np.empty(counts.size)
        values[oob] = sums[oob] / counts[oob]
        if not oob.all():
            bad = np.flatnonzero(~oob)
            if not fallback:
                raise NoOOBTreesError(f"rows {bad.tolist()} have no OOB trees")
            logger.warning("%d rows have no OOB trees; using in-bag prediction",
                           bad.size)
            values[bad] = self.predict(self.x_train[bad])
        return OOBPrediction(values, counts, oob)


class OOBPrediction(NamedTuple):
    values: np.ndarray
    n_trees: np.ndarray
    oob: np.ndarray


class Split(NamedTuple):
    variable: int
    threshold: float
    score: float


# --- growth -----------------------------------------------------------------

def _fingerprint(n: int, p: int, spec: ForestSpec) -> str:
    key = f"{n}:{p}:{spec.n_trees}:{spec.mtry}:{spec.nodesize}:{spec.seed}"
    return hashlib.sha256(key.encode()).hexdigest()[:16]


def grow_trees(x, y2, obs, treat, *, n_trees, mtry, nodesize, seed, mode,
               inbag=None, candidate_vars=None, stream=0, threads=None,
               n_features=None):
    """Shared growth loop for every split criterion; returns node arrays."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, p = x.shape
    XT = np.ascontiguousarray(x.T)
    presorted = np.argsort(XT, axis=1, kind="stable")
    if inbag is None:
        inbag = bootstrap_plan(n, n_trees, seed)
    inbag = np.ascontiguousarray(inbag[:n_trees], dtype=np.int32)
    if inbag.shape != (n_trees, n):
        raise ConfigurationError("bootstrap plan has the wrong shape")
    allowed = (np.arange(p, dtype=np.int64) if candidate_vars is None
               else np.asarray(sorted(candidate_vars), dtype=np.int64))
    seeds = [split_seed(seed, t, stream) for t in range(n_trees)]

    def grow(t):
        return K.grow_tree(XT, presorted, y2, obs, treat, inbag[t], allowed,
                           int(mtry),
                           float(nodesize), mode, seeds[t])

    threads = threads or _threads
    if threads > 1 and n_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(grow, range(n_trees)))
    else:
        parts = [grow(t) for t in range(n_trees)]
    sizes = np.array([part[0].size for part in parts])
    offsets = np.zeros(n_trees + 1, np.int64)
    np.cumsum(sizes, out=offsets[1:])
    arrays = [np.concatenate([part[k] for part in parts]) for k in range(6)]
    return arrays, offsets, inbag


def grow_forest(x, y, spec: ForestSpec, *, inbag=None, candidate_vars=None,
                stream: int = 0, threads: int | None = None) -> Forest:
    """Grow a regression forest on covariates ``x`` and outcome ``y``.

    ``inbag`` optionally supplies a fixed (n_trees, n) bootstrap plan.
    ``candidate_vars`` restricts which columns may be split on.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.ndim != 2:
        raise SchemaError("x must be 2-d")
    y = np.asarray(y, dtype=np.float64)
    n, p = x.shape
    if y.shape != (n,):
        raise SchemaError("y must have one entry per row of x")
    if not np.all(np.isfinite(y)):
        raise SchemaError("y contains non-finite values")
    spec.validate(n, p)
    y2 = np.ascontiguousarray(np.column_stack([y, y]))
    obs = np.ones((n, 2), bool)
    treat = np.zeros(n, np.int8)
    arrays, offsets, inbag = grow_trees(
        x, y2, obs, treat, n_trees=spec.n_trees, mtry=spec.resolve_mtry(p),
        nodesize=spec.nodesize, seed=spec.seed, mode=K.MODE_VARIANCE,
        inbag=inbag, candidate_vars=candidate_vars, stream=stream,
        threads=threads)
    return Forest(*arrays, offsets=offsets, inbag=inbag, spec=spec,
                  n_features=p, x_train=x, fingerprint=_fingerprint(n, p, spec))


def predict(forest: Forest, x):
    """Forest-average prediction; scalar for a single row."""
    out = forest.predict(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def predict_oob(forest: Forest, row_index: int) -> tuple[float, int]:
    """OOB prediction of one training row and the number of trees used."""
    row = forest.x_train[row_index:row_index + 1]
    inbag = np.ascontiguousarray(forest.inbag[:, row_index:row_index + 1])
    sums, counts = K.predict_forest(forest.feature, forest.threshold,
                                    forest.left, forest.right, forest.value,
                                    forest.offsets, row, inbag, True)
    if counts[0] == 0:
        raise NoOOBTreesError(f"row {row_index} is in-bag for every tree")
    return float(sums[0] / counts[0]), int(counts[0])


def best_split(x, y, candidate_vars, nodesize: int = 1,
               weights=None) -> Split | None:
    """Best variance-reduction split of the rows in ``x``/``y``.

    Every variable in ``candidate_vars`` is scanned.  Returns None when no
    split leaves ``nodesize`` rows on both sides or ``y`` is constant.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    w = np.ones(n, np.int32) if weights is None else np.asarray(weights, np.int32)
    XT = np.ascontiguousarray(x.T)
    presorted = np.argsort(XT, axis=1, kind="stable")
    srt = K.inbag_sorted_rows(presorted, w, int(np.sum(w > 0)))
    allowed = np.asarray(sorted(candidate_vars), dtype=np.int64)
    var, thr, score = K.find_split(
        XT, np.ascontiguousarray(np.column_stack([y, y])), np.ones((n, 2), bool),
        np.zeros(n, np.int8), w, srt, 0, srt.shape[1], allowed.copy(),
        allowed.size, float(nodesize), K.MODE_VARIANCE)
    if var < 0:
        return None
    return Split(int(var), float(thr), float(score))
