"""Counterfactual imputation with bivariate-response forests.

Each row carries the pair (Y(0), Y(1)); the entry for the treatment not
received is missing.  The first forest splits on observed entries only and
fills the gaps from out-of-bag terminal nodes.  Later forests split on the
completed pairs and refill the originally missing entries from in-bag
terminal-node means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .data import Dataset
from .exceptions import ConfigurationError, SchemaError
from .forest import Forest, ForestSpec, derive_seed, grow_trees

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 5
# where a terminal node without donors for a column borrows its value:
# "ancestor" = nearest ancestor with donors, "tree" = tree-wide donor mean
FALLBACKS = ("ancestor", "tree")


@dataclass
class BivariateState:
    """Completed outcome pairs; column j holds the outcome under treatment j."""

    y_pair: np.ndarray
    observed_mask: np.ndarray
    iteration: int = 0
    changes: list[float] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return bool(np.all(np.isfinite(self.y_pair)))


def bivariate_split_score(y_pair, observed, x, threshold, weights=None) -> float:
    """Standardized two-column variance reduction of the split ``x <= threshold``.

    Each column contributes (SSE_parent - SSE_left - SSE_right) / SSE_parent
    computed over its observed entries only.  Columns with zero variance
    contribute nothing.
    """
    y_pair = np.asarray(y_pair, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    x = np.asarray(x, dtype=np.float64)
    w = np.ones(x.size) if weights is None else np.asarray(weights, np.float64)
    go_left = x <= threshold
    score = 0.0
    for j in range(2):
        o = observed[:, j] & (w > 0)
        yj, wj, lj = y_pair[o, j], w[o], go_left[o]
        if yj.size == 0:
            continue
        sse = _sse(yj, wj)
        if sse <= 0:
            continue
        score += (sse - _sse(yj[lj], wj[lj]) - _sse(yj[~lj], wj[~lj])) / sse
    return score


def _sse(y, w):
    if y.size == 0:
        return 0.0
    mean = np.sum(w * y) / np.sum(w)
    return float(np.sum(w * (y - mean) ** 2))


def _grow_bivariate(x, y_pair, observed, spec: ForestSpec, seed, threads):
    n, p = x.shape
    y2 = np.ascontiguousarray(np.where(observed, y_pair, 0.0))
    arrays, offsets, inbag = grow_trees(
        x, y2, np.ascontiguousarray(observed), np.zeros(n, np.int8),
        n_trees=spec.n_trees, mtry=spec.resolve_mtry(p), nodesize=spec.nodesize,
        seed=seed, mode=K.MODE_BIVARIATE, threads=threads)
    return Forest(*arrays, offsets=offsets, inbag=inbag, spec=spec,
                  n_features=p, x_train=x)


def _impute_pass(forest: Forest, y_pair, donor, target, use_oob, fallback):
    leaves = forest.apply(forest.x_train)
    y = np.ascontiguousarray(np.nan_to_num(y_pair))
    donor = np.ascontiguousarray(donor)
    sums, counts = K.terminal_node_impute(
        forest.left, forest.right, forest.offsets, leaves, forest.inbag, y,
        donor, np.ascontiguousarray(target), use_oob, fallback == "ancestor")
    if use_oob and np.any(target & (counts == 0)):
        # rows in-bag for every tree: fall back to all trees
        stuck = target & (counts == 0)
        logger.warning("%d entries have no OOB trees; using in-bag trees",
                       int(stuck.sum()))
        s2, c2 = K.terminal_node_impute(
            forest.left, forest.right, forest.offsets, leaves, forest.inbag, y,
            donor, np.ascontiguousarray(stuck), False, fallback == "ancestor")
        sums[stuck] = s2[stuck]
        counts[stuck] = c2[stuck]
    out = y_pair.copy()
    ok = target & (counts > 0)
    out[ok] = sums[ok] / counts[ok]
    empty = target & (counts == 0)
    if empty.any():
        for j in range(2):
            out[empty[:, j], j] = np.mean(y_pair[donor[:, j], j])
    return out


def impute_bivariate(x, y_pair, observed, spec: ForestSpec | None = None,
                     n_iterations: int = DEFAULT_ITERATIONS, *,
                     fallback: str = "ancestor",
                     threads: int | None = None) -> BivariateState:
    """Iteratively impute the unobserved entries of ``y_pair``."""
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    observed = np.asarray(observed, dtype=bool)
    y_pair = np.array(y_pair, dtype=np.float64)
    n = x.shape[0]
    if y_pair.shape != (n, 2) or observed.shape != (n, 2):
        raise SchemaError("y_pair and observed must be n x 2")
    if n_iterations < 1:
        raise ConfigurationError("n_iterations must be positive")
    if fallback not in FALLBACKS:
        raise ConfigurationError(f"fallback must be one of {FALLBACKS}")
    for j in range(2):
        if not observed[:, j].any():
            raise ConfigurationError(f"no observed outcomes under treatment {j}")
    spec = spec or ForestSpec(nodesize=1)
    spec.validate(n, x.shape[1])
    original = y_pair.copy()
    missing = ~observed
    y_pair[missing] = np.nan
    state = BivariateState(y_pair, observed.copy())
    if not missing.any():
        state.y_pair = original
        state.iteration = n_iterations
        state.changes = [0.0] * (n_iterations - 1)
        return state

    for it in range(1, n_iterations + 1):
        seed = derive_seed(spec.seed, it)
        if it == 1:
            forest = _grow_bivariate(x, y_pair, observed, spec, seed, threads)
            new = _impute_pass(forest, y_pair, observed, missing, use_oob=True,
                               fallback=fallback)
        else:
            forest = _grow_bivariate(x, y_pair, np.ones_like(observed), spec,
                                     seed, threads)
            new = _impute_pass(forest, y_pair, observed, missing, use_oob=False,
                               fallback=fallback)
        new[observed] = original[observed]
        if it > 1:
            state.changes.append(float(np.mean(np.abs(new[missing] - y_pair[missing]))))
        y_pair = new
        state.y_pair = y_pair
        state.iteration = it
    return state


def impute_counterfactuals(data: Dataset, spec: ForestSpec | None = None,
                           n_iterations: int = DEFAULT_ITERATIONS, *,
                           fallback: str = "ancestor",
                           threads: int | None = None) -> BivariateState:
    """Impute each row's unobserved potential outcome."""
    data.require_both_arms()
    n = data.n
    y_pair = np.full((n, 2), np.nan)
    y_pair[np.arange(n), data.t] = data.y
    observed = np.zeros((n, 2), bool)
    observed[np.arange(n), data.t] = True
    return impute_bivariate(data.x, y_pair, observed, spec, n_iterations,
                            fallback=fallback, threads=threads)
