"""Accuracy metrics and the pairwise/multi-model comparison statistics."""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import RatingDataset


class MetricPair(NamedTuple):
    mae: float
    rmse: float
    n: int
    n_cold: int = 0


class LossWin(NamedTuple):
    losses: int
    wins: int
    ties: int


def score(
    test: RatingDataset,
    predictor: Callable[[np.ndarray, np.ndarray], np.ndarray],
    clamp_bounds: tuple[float, float] | None = None,
    cold: np.ndarray | None = None,
) -> MetricPair:
    """MAE and RMSE of ``predictor`` on the test triples.

    ``predictor`` is vectorized: it takes aligned user and item index arrays
    and returns predictions.  Cold triples (``cold`` mask, falling back to
    ``test.cold``) are scored with the rating-scale midpoint instead.
    """
    if len(test) == 0:
        raise ValueError("cannot score an empty test set")
    if cold is None:
        cold = test.cold
    pred = np.asarray(predictor(test.users, test.items), dtype=np.float64)
    if clamp_bounds is not None:
        pred = np.clip(pred, *clamp_bounds)
    n_cold = 0
    if cold is not None and cold.any():
        pred = np.where(cold, test.midpoint, pred)
        n_cold = int(cold.sum())
    err = test.ratings - pred
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    assert mae <= rmse * (1 + 1e-12) + 1e-15, (mae, rmse)
    return MetricPair(mae, rmse, len(test), n_cold)


def loss_win(ours: Sequence[float], theirs: Sequence[float], lower_is_better: bool = True) -> LossWin:
    """Count cells where ours is worse (loss), better (win) or equal."""
    ours = np.asarray(ours, dtype=np.float64)
    theirs = np.asarray(theirs, dtype=np.float64)
    if ours.shape != theirs.shape:
        raise ValueError("ours and theirs must be aligned")
    better = ours < theirs if lower_is_better else ours > theirs
    worse = ours > theirs if lower_is_better else ours < theirs
    return LossWin(int(worse.sum()), int(better.sum()), int((ours == theirs).sum()))


def _signed_rank_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign vectors giving each value of the doubled positive-rank sum."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2.tolist():
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(pairs, lower_is_better: bool = True) -> float:
    """Exact one-sided Wilcoxon signed-rank p-value for "ours is better".

    ``pairs`` is a sequence of ``(ours, theirs)``.  Zero differences are
    dropped, tied magnitudes get average ranks, and the null distribution is
    counted exactly over all sign assignments.  Returns ``nan`` when every
    difference is zero.
    """
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    d = arr[:, 1] - arr[:, 0] if lower_is_better else arr[:, 0] - arr[:, 1]
    d = d[d != 0]
    if len(d) == 0:
        return math.nan
    ranks2 = np.rint(2 * rankdata(np.abs(d))).astype(np.int64)
    observed = int(ranks2[d > 0].sum())
    counts = _signed_rank_counts(ranks2)
    tail = sum(counts[observed:])
    return float(tail / 2 ** len(d))


def friedman_ranks(table, lower_is_better: bool = True) -> np.ndarray:
    """Mean rank of each model, ``table`` being models x cases.

    Within each case models are ranked 1..m (1 = best) with average ranks
    for ties.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.size == 0:
        raise ValueError("table must be a non-empty models x cases matrix")
    values = table if lower_is_better else -table
    ranks = rankdata(values, axis=0)
    return ranks.mean(axis=1)
