"""Score vectors, subset queries and the transformed-score algebra.

All downstream algorithms consume p-values through these types: a
:class:`ScoreSet` fixes the descending sort order once, a
:class:`SubsetQuery` pins a subset of hypotheses to positions in that
order, and :class:`TransformedScores` carries h(p) with prefix sums so
that any contiguous block sum is a single difference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidScore

# Smallest positive normal double; p = 0 is clamped here so that
# negative-r transforms stay finite.
EPS_MIN = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class ScoreSet:
    """Immutable p-value vector with its descending sort order.

    ``values`` keeps the original input order (after clamping),
    ``sorted_values`` is non-increasing, and ``sort_order[k]`` is the
    original index of the k-th largest value. Ties keep input order
    (stable sort), so construction is deterministic.
    """

    values: np.ndarray
    sorted_values: np.ndarray
    sort_order: np.ndarray
    m: int

    def __post_init__(self):
        self.values.setflags(write=False)
        self.sorted_values.setflags(write=False)
        self.sort_order.setflags(write=False)


@dataclass(frozen=True)
class SubsetQuery:
    """A subset S of hypotheses, resolved against a ScoreSet.

    ``indices`` are original 0-based indices (sorted ascending);
    ``positions`` and ``comp_positions`` locate S and its complement in
    the descending sort order of the parent ScoreSet.
    """

    indices: np.ndarray
    positions: np.ndarray
    comp_positions: np.ndarray
    m: int

    def __post_init__(self):
        self.indices.setflags(write=False)
        self.positions.setflags(write=False)
        self.comp_positions.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class TransformedScores:
    """h(p) in descending-p order with prefix sums.

    ``prefix_sums`` has length m+1 with a leading zero, so the sum of
    h over sorted positions [i, j) is ``prefix_sums[j] - prefix_sums[i]``.
    For r = +-inf the test is an order-statistic rule, no sums are built
    and ``separable`` is False.
    """

    r: float
    h_values: np.ndarray | None
    prefix_sums: np.ndarray | None
    sorted_values: np.ndarray
    m: int
    separable: bool = field(default=True)


def build_score_set(raw) -> ScoreSet:
    """Validate, clamp and sort a raw p-value vector.

    Entries must be finite and in [0, 1]; zeros are clamped to the
    smallest positive normal double (see module notes). The sort is
    stable descending.
    """
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 1:
        values = values.reshape(-1)
    if values.size == 0:
        raise EmptyInput("score vector is empty")
    bad = ~((values >= 0.0) & (values <= 1.0))
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise InvalidScore(idx, float(values[idx]) if math.isfinite(values[idx]) else values[idx])
    values = np.maximum(values, EPS_MIN)
    # stable descending sort: sort the negated values ascending
    order = np.argsort(-values, kind="stable")
    return ScoreSet(
        values=values,
        sorted_values=values[order],
        sort_order=order.astype(np.int64),
        m=int(values.size),
    )


def presorted_score_set(sorted_desc) -> ScoreSet:
    """Wrap an already descending-sorted vector without re-sorting.

    Used by the linear-time paths where the O(m log m) sort is done (or
    unnecessary) ahead of time; values are assumed valid and positive.
    """
    sv = np.asarray(sorted_desc, dtype=np.float64)
    order = np.arange(sv.size, dtype=np.int64)
    return ScoreSet(values=sv, sorted_values=sv, sort_order=order, m=int(sv.size))


def make_subset(scores: ScoreSet, indices) -> SubsetQuery:
    """Resolve original 0-based indices into a SubsetQuery."""
    idx = np.unique(np.asarray(indices, dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= scores.m):
        raise InvalidScore(int(idx[0] if idx[0] < 0 else idx[-1]), "subset index out of range")
    # position of each original index in the descending order
    inv = np.empty(scores.m, dtype=np.int64)
    inv[scores.sort_order] = np.arange(scores.m)
    positions = np.sort(inv[idx])
    mask = np.ones(scores.m, dtype=bool)
    mask[positions] = False
    comp_positions = np.nonzero(mask)[0].astype(np.int64)
    return SubsetQuery(indices=idx, positions=positions,
                       comp_positions=comp_positions, m=scores.m)


def transform_values(p: np.ndarray, r: float) -> np.ndarray:
    """Elementwise h(p): p^r for r > 0, log p for r = 0, -p^r for r < 0."""
    if r > 0:
        return p ** r
    if r == 0:
        return np.log(p)
    return -(p ** r)


def transform(scores: ScoreSet, r: float) -> TransformedScores:
    """Build transformed scores with prefix sums for a finite exponent.

    h is non-decreasing in p in every finite branch, so small sums mean
    small p-values and rejection corresponds to a sum below g(|S|, alpha).
    """
    if math.isinf(r):
        return TransformedScores(r=r, h_values=None, prefix_sums=None,
                                 sorted_values=scores.sorted_values,
                                 m=scores.m, separable=False)
    # r = 1 is the identity transform; reuse the sorted values (callers
    # treat h_values as read-only) instead of paying a pow pass
    if r == 1.0:
        h = scores.sorted_values
    else:
        h = transform_values(scores.sorted_values, r)
    prefix = np.zeros(scores.m + 1, dtype=np.float64)
    np.cumsum(h, out=prefix[1:])
    return TransformedScores(r=r, h_values=h, prefix_sums=prefix,
                             sorted_values=scores.sorted_values, m=scores.m)


def generalized_mean(r: float, values) -> float:
    """Power mean M_r of p-values, with the conventions used throughout:

    M_inf = max p, M_{-inf} = m * min p (the Bonferroni statistic, with
    the factor m baked in so the critical value is alpha itself), and
    M_0 the geometric mean. Computed in log space with the max (or min)
    factored out so extreme exponents neither overflow nor underflow.
    """
    p = np.asarray(values, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("generalized_mean of empty vector")
    if r == math.inf:
        return float(p.max())
    if r == -math.inf:
        return float(p.size * p.min())
    if r == 0:
        return float(np.exp(np.mean(np.log(p))))
    # factor out the dominant term: max for r > 0, min for r < 0, so the
    # remaining ratios are <= 1 after exponentiation by r
    ref = p.max() if r > 0 else p.min()
    z = np.exp(r * (np.log(p) - np.log(ref)))
    return float(ref * np.mean(z) ** (1.0 / r))
