"""Closed-testing engine.

Closed testing rejects an intersection hypothesis H_S only when every
superset intersection is rejected by its local test. For monotone,
symmetric, separable local tests the whole procedure collapses onto
sorted prefix sums: the worst superset of S of each size is S plus the
largest remaining scores, which is what every routine here exploits to
stay linear after the initial sort.

Exponents r = +-inf are not separable but are consonant, so their paths
reduce to Holm (r = -inf) and the all-or-nothing max-p rule (r = inf).

``brute_force_closure`` is the exponential reference oracle (m <= 15)
that the fast paths are validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .calibration import LocalTestSpec, g_array, threshold_fn
from .errors import InvalidGamma, InvalidLevel, OracleTooLarge
from .scores import ScoreSet, SubsetQuery, TransformedScores, make_subset, transform


@dataclass(frozen=True)
class ClosureResult:
    """Everything closed testing can say about one queried set."""

    query: SubsetQuery
    p_local: float
    p_closed: float
    coma: float
    rejected: bool
    fdp_bound: int
    true_discoveries_lb: int


@dataclass(frozen=True)
class SelectionResult:
    """Output of the automatic rejection-set selection shortcuts."""

    selected: np.ndarray  # original 0-based indices
    size: int
    guarantee: str
    chain_used: str


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")


def local_test(tscores: TransformedScores, query: SubsetQuery,
               thr, alpha: float) -> bool:
    """Level-alpha local test of the intersection hypothesis over S.

    Separable case: sum of transformed scores against g(|S|, alpha).
    r = +-inf: order-statistic rules (max p <= alpha; |S| min p <= alpha).
    """
    _check_alpha(alpha)
    s = query.size
    if s == 0:
        return True
    if tscores.r == math.inf:
        return float(tscores.sorted_values[query.positions].max()) <= alpha
    if tscores.r == -math.inf:
        return s * float(tscores.sorted_values[query.positions].min()) <= alpha
    q = float(tscores.h_values[query.positions].sum())
    return q <= thr.g(s, alpha)


def _chain_sums(tscores: TransformedScores, query: SubsetQuery):
    """Sizes and transformed-score sums of the superset chain I_0..I_{m-s}.

    I_i is S plus the i largest scores of the complement; because the
    complement positions are already in descending-score order one prefix
    sum gives every candidate's sum in O(m) total.
    """
    s_sum = float(tscores.h_values[query.positions].sum())
    comp_h = tscores.h_values[query.comp_positions]
    sums = np.empty(comp_h.size + 1)
    sums[0] = 0.0
    np.cumsum(comp_h, out=sums[1:])
    sums += s_sum
    sizes = query.size + np.arange(comp_h.size + 1)
    return sizes, sums


def adjusted_p_local(scores: ScoreSet, spec: LocalTestSpec,
                     query: SubsetQuery) -> float:
    """Adjusted local p-value p(S): the smallest alpha at which the local
    test of S rejects."""
    s = query.size
    if s == 0:
        return 0.0
    if spec.r == math.inf:
        return float(scores.sorted_values[query.positions].max())
    if spec.r == -math.inf:
        return min(1.0, s * float(scores.sorted_values[query.positions].min()))
    tscores = transform(scores, spec.r)
    thr = threshold_fn(spec, scores.m)
    alpha_of = thr.require_inverse()
    q = float(tscores.h_values[query.positions].sum())
    return alpha_of(s, q)


def adjusted_p_closed(scores: ScoreSet, spec: LocalTestSpec,
                      query: SubsetQuery) -> float:
    """Adjusted closed p-value p_bar(S) = max over the superset chain of
    the local adjusted p-values, computed in O(m) after sorting."""
    s = query.size
    if s == 0:
        return 0.0
    if spec.r == math.inf:
        # every chain element's max p grows toward the global max
        return float(scores.sorted_values.max())
    if spec.r == -math.inf:
        sv = scores.sorted_values
        min_s = float(sv[query.positions].min())
        comp = sv[query.comp_positions]
        best = min(1.0, s * min_s)
        run_min = min_s
        for i in range(comp.size):
            run_min = min(run_min, float(comp[i]))
            best = max(best, min(1.0, (s + i + 1) * run_min))
        return best
    thr = threshold_fn(spec, scores.m)
    alpha_of = thr.require_inverse()
    tscores = transform(scores, spec.r)
    sizes, sums = _chain_sums(tscores, query)
    return max(alpha_of(int(sz), float(q)) for sz, q in zip(sizes, sums))


def coma(scores: ScoreSet, spec: LocalTestSpec, query: SubsetQuery) -> float:
    """Cost of multiplicity adjustment p_bar(S)/p(S); +inf when the local
    adjusted p-value degenerates to 0 (all scores at the clamp floor).

    The r = -inf branch uses the raw order-statistic quantities without
    the clamp at 1, so the Bonferroni identity coma(S) = m/|S| is exact
    whenever S contains the smallest score, even when |S| min p > 1.
    """
    if spec.r == -math.inf and query.size > 0:
        sv = scores.sorted_values
        s = query.size
        min_s = float(sv[query.positions].min())
        if min_s == 0.0:
            return math.inf
        comp = sv[query.comp_positions]
        best = s * min_s
        run_min = min_s
        for i in range(comp.size):
            run_min = min(run_min, float(comp[i]))
            best = max(best, (s + i + 1) * run_min)
        return best / (s * min_s)
    p_loc = adjusted_p_local(scores, spec, query)
    p_cls = adjusted_p_closed(scores, spec, query)
    if p_loc == 0.0:
        return math.inf
    return p_cls / p_loc


def post_hoc_reject(scores: ScoreSet, spec: LocalTestSpec,
                    query: SubsetQuery, alpha: float) -> bool:
    """Closed-testing rejection of H_S: every chain superset must be
    locally rejected."""
    _check_alpha(alpha)
    s = query.size
    if s == 0:
        return True
    if spec.r == math.inf:
        return float(scores.sorted_values.max()) <= alpha
    if spec.r == -math.inf:
        sv = scores.sorted_values
        comp = sv[query.comp_positions]
        run_min = float(sv[query.positions].min())
        if s * run_min > alpha:
            return False
        for i in range(comp.size):
            run_min = min(run_min, float(comp[i]))
            if (s + i + 1) * run_min > alpha:
                return False
        return True
    tscores = transform(scores, spec.r)
    G = g_array(spec, scores.m, alpha)
    sizes, sums = _chain_sums(tscores, query)
    return bool(np.all(sums <= G[sizes]))


def holm_rejections(p_values: np.ndarray, alpha: float) -> np.ndarray:
    """Original 0-based indices rejected by the step-down Holm procedure."""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    thresh = alpha / (m - np.arange(m))
    ok = p[order] <= thresh
    bad = np.nonzero(~ok)[0]
    k = m if bad.size == 0 else int(bad[0])
    return np.sort(order[:k])


def fdp_bound(scores: ScoreSet, spec: LocalTestSpec, query: SubsetQuery,
              alpha: float) -> int:
    """Simultaneous (1 - alpha) upper bound e_bar on the number of false
    discoveries in S: the size of the largest subset of S that closed
    testing cannot reject.

    Finite r goes through the linear-time merge kernel; r = -inf counts
    the members of S missed by Holm; r = inf is all-or-nothing.
    """
    _check_alpha(alpha)
    s = query.size
    if s == 0:
        return 0
    if spec.r == math.inf:
        return 0 if float(scores.sorted_values.max()) <= alpha else s
    if spec.r == -math.inf:
        rejected = holm_rejections(scores.values, alpha)
        hits = np.intersect1d(query.indices, rejected, assume_unique=True)
        return s - int(hits.size)
    tscores = transform(scores, spec.r)
    G = g_array(spec, scores.m, alpha)
    u = np.ascontiguousarray(tscores.h_values[query.positions])
    if s == scores.m:
        # the merge loop needs a non-empty complement; for S = [m] the
        # largest non-rejected set is the largest prefix whose worst-case
        # sum exceeds its threshold
        prefix = tscores.prefix_sums[1:]
        bad = np.nonzero(prefix > G[1:])[0]
        return 0 if bad.size == 0 else int(bad[-1]) + 1
    v = np.ascontiguousarray(tscores.h_values[query.comp_positions])
    return int(_kernels.fdp_bound_kernel(u, v, G))


def _elementary_rejection_start(prefix: np.ndarray, h: np.ndarray,
                                G: np.ndarray) -> int:
    """Smallest 1-based sorted position k such that every position in
    {k..m} is rejected after closure, or m + 1 when none is.

    Position i is rejected after closure iff its worst superset of every
    size s passes: the top s - 1 scores plus i for s <= i, the top s
    scores for s > i. Both conditions are monotone in i.
    """
    m = h.size
    P_s = prefix[1:]          # P_s for s = 1..m
    A = G[1:] - prefix[:-1]   # G_s - P_{s-1}
    bad = np.nonzero(P_s > G[1:])[0]
    last_bad = 0 if bad.size == 0 else int(bad[-1]) + 1
    min_A = np.minimum.accumulate(A)
    ok = (np.arange(1, m + 1) >= last_bad) & (h <= min_A)
    hits = np.nonzero(ok)[0]
    return m + 1 if hits.size == 0 else int(hits[0]) + 1


def largest_fwer_set(scores: ScoreSet, spec: LocalTestSpec,
                     alpha: float) -> SelectionResult:
    """Largest set with zero false discoveries at confidence 1 - alpha,
    i.e. all elementary hypotheses rejected by closed testing; this set
    has strong FWER control at level alpha. O(m) after sorting."""
    _check_alpha(alpha)
    m = scores.m
    if spec.r == math.inf:
        if float(scores.sorted_values.max()) <= alpha:
            sel = np.sort(scores.sort_order)
        else:
            sel = np.empty(0, dtype=np.int64)
        return SelectionResult(selected=sel, size=int(sel.size),
                               guarantee=f"FWER({alpha})",
                               chain_used="all-or-nothing")
    if spec.r == -math.inf:
        sel = holm_rejections(scores.values, alpha)
        return SelectionResult(selected=sel, size=int(sel.size),
                               guarantee=f"FWER({alpha})",
                               chain_used="Holm step-down")
    tscores = transform(scores, spec.r)
    G = g_array(spec, m, alpha)
    k = _elementary_rejection_start(tscores.prefix_sums, tscores.h_values, G)
    sel = np.sort(scores.sort_order[k - 1:]) if k <= m else np.empty(0, dtype=np.int64)
    return SelectionResult(selected=sel.astype(np.int64), size=int(sel.size),
                           guarantee=f"FWER({alpha})",
                           chain_used="sorted elementary hypotheses")


def largest_fdp_set(scores: ScoreSet, spec: LocalTestSpec, alpha: float,
                    gamma: float, chain=None) -> SelectionResult:
    """Largest candidate set whose false discovery proportion is at most
    gamma with confidence 1 - alpha.

    The candidate chain defaults to prefixes of the ascending p-value
    order (S_k = the k smallest p-values). The scan starts from the
    largest candidate and uses the batch skip k <- floor((k - e)/(1 -
    gamma)) justified by the monotonicity of true-discovery counts, so at
    most m bound evaluations are ever needed. gamma = 0 with the default
    chain short-circuits to the linear-time FWER selection.
    """
    _check_alpha(alpha)
    if not (0.0 <= gamma < 1.0):
        raise InvalidGamma(f"gamma must be in [0,1), got {gamma}")
    if gamma == 0.0 and chain is None:
        res = largest_fwer_set(scores, spec, alpha)
        return SelectionResult(selected=res.selected, size=res.size,
                               guarantee=f"FDP(0,{alpha})",
                               chain_used="ascending p-value prefixes")
    m = scores.m
    if chain is None:
        n = m
        chain_desc = "ascending p-value prefixes"

        def candidate(k):
            positions = np.arange(m - k, m, dtype=np.int64)
            return make_subset(scores, scores.sort_order[positions])
    else:
        chain = [np.asarray(c, dtype=np.int64) for c in chain]
        n = len(chain)
        chain_desc = "user-supplied chain"

        def candidate(k):
            return make_subset(scores, chain[k - 1])

    k = n
    while k >= 1:
        q = candidate(k)
        e_bar = fdp_bound(scores, spec, q, alpha)
        if e_bar / k <= gamma:
            return SelectionResult(selected=q.indices, size=k,
                                   guarantee=f"FDP({gamma},{alpha})",
                                   chain_used=chain_desc)
        k = math.floor((k - e_bar) / (1.0 - gamma))
    return SelectionResult(selected=np.empty(0, dtype=np.int64), size=0,
                           guarantee=f"FDP({gamma},{alpha})",
                           chain_used=chain_desc)


@dataclass(frozen=True)
class BruteForceClosure:
    """Exact closure over the full subset lattice (masks over sorted
    positions; bit i of a mask is sorted position i)."""

    m: int
    t_local: np.ndarray
    t_closed: np.ndarray
    e_bar: np.ndarray
    sort_order: np.ndarray

    def mask_of(self, query: SubsetQuery) -> int:
        return int(np.bitwise_or.reduce(1 << query.positions.astype(np.int64),
                                        initial=0))


def brute_force_closure(scores: ScoreSet, spec: LocalTestSpec,
                        alpha: float) -> BruteForceClosure:
    """Reference implementation: evaluate every local test, sweep the
    lattice for closure, and read off e_bar for every subset. m <= 15."""
    _check_alpha(alpha)
    m = scores.m
    if m > 15:
        raise OracleTooLarge(f"brute force capped at m=15, got {m}")
    n_masks = 1 << m
    masks = np.arange(n_masks, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(m)) & 1).astype(bool)
    sizes = bits.sum(axis=1)
    sv = scores.sorted_values
    if spec.r == math.inf:
        vals = np.where(bits, sv[None, :], -np.inf).max(axis=1)
        t_loc = vals <= alpha
    elif spec.r == -math.inf:
        vals = np.where(bits, sv[None, :], np.inf).min(axis=1)
        with np.errstate(invalid="ignore"):
            t_loc = sizes * vals <= alpha
    else:
        tscores = transform(scores, spec.r)
        G = g_array(spec, m, alpha)
        sums = bits @ tscores.h_values
        with np.errstate(invalid="ignore"):
            t_loc = sums <= G[sizes]
    t_loc[0] = True
    t_closed = t_loc.copy()
    for i in range(m):
        lower = np.nonzero((masks >> i) & 1 == 0)[0]
        t_closed[lower] &= t_closed[lower + (1 << i)]
    # largest non-rejected subset of each mask: subset-max sweep over the
    # sizes of non-rejected sets
    val = np.where(t_closed, -1, sizes.astype(np.int64))
    val[0] = -1
    for i in range(m):
        upper = np.nonzero((masks >> i) & 1 == 1)[0]
        val[upper] = np.maximum(val[upper], val[upper - (1 << i)])
    e_bar = np.maximum(val, 0)
    return BruteForceClosure(m=m, t_local=t_loc, t_closed=t_closed,
                             e_bar=e_bar, sort_order=scores.sort_order)


def evaluate(scores: ScoreSet, spec: LocalTestSpec, query: SubsetQuery,
             alpha: float) -> ClosureResult:
    """Bundle the per-set answers into a ClosureResult."""
    _check_alpha(alpha)
    e_bar = fdp_bound(scores, spec, query, alpha)
    if spec.backend == "EmpiricalTable" and math.isfinite(spec.r):
        p_loc = math.nan
        p_cls = math.nan
        cm = math.nan
        rejected = post_hoc_reject(scores, spec, query, alpha)
    else:
        p_loc = adjusted_p_local(scores, spec, query)
        p_cls = adjusted_p_closed(scores, spec, query)
        cm = math.inf if p_loc == 0.0 else p_cls / p_loc
        rejected = p_cls <= alpha
    return ClosureResult(query=query, p_local=p_loc, p_closed=p_cls,
                         coma=cm, rejected=rejected, fdp_bound=e_bar,
                         true_discoveries_lb=query.size - e_bar)
