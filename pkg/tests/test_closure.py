import itertools
import math

import numpy as np
import pytest

from meanclosure import (
    InvalidGamma,
    LocalTestSpec,
    OracleTooLarge,
    adjusted_p_closed,
    adjusted_p_local,
    brute_force_closure,
    build_score_set,
    coma,
    evaluate,
    fdp_bound,
    holm_rejections,
    largest_fdp_set,
    largest_fwer_set,
    local_test,
    make_subset,
    post_hoc_reject,
    transform,
    threshold_fn,
)

from conftest import random_instance, textbook_holm

FINITE_RS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


def spec_of(r, backend="ArbitraryDep"):
    return LocalTestSpec(r=r, backend=backend)


def run_local(ss, r, idx, alpha, backend="ArbitraryDep"):
    ts = transform(ss, r)
    thr = threshold_fn(spec_of(r, backend), ss.m) if math.isfinite(r) else None
    return local_test(ts, make_subset(ss, idx), thr, alpha)


class TestLocalTest:
    def test_singleton(self):
        # with the Gaussian calibration c(1, alpha) = alpha in every case,
        # so a single p-value is just compared against alpha; the
        # arbitrary-dependence factor stays size-free and inflates even
        # singletons, so it is exercised separately below
        ss = build_score_set([0.04])
        for r in (-1.0, 0.0, 1.0):
            assert run_local(ss, r, [0], 0.05, backend="GaussAsymptotic")
        for r in (math.inf, -math.inf):
            assert run_local(ss, r, [0], 0.05)

    def test_singleton_arbitrary_dep_keeps_size_free_factor(self):
        ss = build_score_set([0.04])
        assert not run_local(ss, 1.0, [0], 0.05)  # 0.04 > 0.05 / 2
        assert run_local(ss, 1.0, [0], 0.09)

    def test_bonferroni_branch(self):
        ss = build_score_set([0.01, 0.5, 0.6, 0.7])
        assert run_local(ss, -math.inf, [0, 1, 2, 3], 0.05)  # 4 * 0.01 <= 0.05
        assert not run_local(ss, -math.inf, [0, 1, 2, 3], 0.03)

    def test_arithmetic_lemma_example(self):
        ss = build_score_set([0.02, 0.06])
        assert run_local(ss, 1.0, [0, 1], 0.1)   # mean 0.04 <= 0.05
        assert not run_local(ss, 1.0, [0, 1], 0.07)  # 0.04 > 0.035

    def test_max_branch(self):
        ss = build_score_set([0.01, 0.03])
        assert run_local(ss, math.inf, [0, 1], 0.05)
        assert not run_local(ss, math.inf, [0, 1], 0.02)


class TestAdjustedP:
    def test_singleton_equals_local(self):
        ss = build_score_set([0.3])
        q = make_subset(ss, [0])
        for r in FINITE_RS:
            assert adjusted_p_closed(ss, spec_of(r), q) == pytest.approx(
                adjusted_p_local(ss, spec_of(r), q), abs=1e-15)

    def test_full_set_equals_local(self):
        ss = build_score_set([0.1, 0.5, 0.02, 0.8])
        q = make_subset(ss, [0, 1, 2, 3])
        for r in FINITE_RS + (math.inf, -math.inf):
            assert adjusted_p_closed(ss, spec_of(r), q) == pytest.approx(
                adjusted_p_local(ss, spec_of(r), q), abs=1e-15)

    def test_exhaustive_superset_oracle(self):
        rng = np.random.default_rng(40)
        for _ in range(30):
            p = random_instance(rng, 6, 10)
            ss = build_score_set(p)
            m = ss.m
            k = int(rng.integers(1, m))
            idx = rng.choice(m, size=k, replace=False)
            q = make_subset(ss, idx)
            comp = [i for i in range(m) if i not in set(idx.tolist())]
            for r in (-1.0, 0.0, 1.0):
                best = 0.0
                for take in range(len(comp) + 1):
                    for extra in itertools.combinations(comp, take):
                        j = make_subset(ss, list(idx) + list(extra))
                        best = max(best, adjusted_p_local(ss, spec_of(r), j))
                got = adjusted_p_closed(ss, spec_of(r), q)
                assert abs(got - best) < 1e-12, (r, p, idx)

    def test_monotone_in_supersets(self):
        # p_closed never decreases when the queried set shrinks
        ss = build_score_set([0.01, 0.2, 0.4, 0.6, 0.9])
        for r in (-1.0, 1.0):
            big = adjusted_p_closed(ss, spec_of(r), make_subset(ss, [0, 1, 2]))
            small = adjusted_p_closed(ss, spec_of(r), make_subset(ss, [0, 1]))
            assert small >= big - 1e-15


class TestComa:
    def test_bonferroni_on_argmin_prefixes(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            p = random_instance(rng, 3, 12)
            ss = build_score_set(p)
            order = np.argsort(p, kind="stable")
            for k in range(1, ss.m + 1):
                q = make_subset(ss, order[:k])
                got = coma(ss, spec_of(-math.inf), q)
                assert got * k == pytest.approx(ss.m, rel=1e-12)

    def test_full_set_is_one(self):
        ss = build_score_set([0.2, 0.5, 0.7])
        for r in FINITE_RS:
            assert coma(ss, spec_of(r), make_subset(ss, [0, 1, 2])) == pytest.approx(1.0)

    def test_oracle_ratio(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            p = random_instance(rng, 5, 9)
            ss = build_score_set(p)
            idx = rng.choice(ss.m, size=2, replace=False)
            q = make_subset(ss, idx)
            got = coma(ss, spec_of(0.0), q)
            expect = (adjusted_p_closed(ss, spec_of(0.0), q)
                      / adjusted_p_local(ss, spec_of(0.0), q))
            assert got == pytest.approx(expect, rel=1e-12)

    def test_at_least_one(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            p = random_instance(rng)
            ss = build_score_set(p)
            k = int(rng.integers(1, ss.m + 1))
            q = make_subset(ss, rng.choice(ss.m, size=k, replace=False))
            r = float(rng.choice(FINITE_RS))
            assert coma(ss, spec_of(r), q) >= 1.0 - 1e-12


class TestHolm:
    def test_against_textbook(self):
        rng = np.random.default_rng(44)
        for _ in range(300):
            m = int(rng.integers(1, 60))
            p = rng.random(m) ** 2
            alpha = float(rng.choice([0.01, 0.05, 0.2]))
            assert sorted(holm_rejections(p, alpha)) == textbook_holm(p, alpha)


class TestFdpBound:
    def test_empty_set(self):
        ss = build_score_set([0.5, 0.6])
        assert fdp_bound(ss, spec_of(1.0), make_subset(ss, []), 0.05) == 0

    def test_nothing_rejected(self):
        ss = build_score_set([0.9, 0.95, 0.99])
        q = make_subset(ss, [0, 1, 2])
        for r in FINITE_RS:
            assert fdp_bound(ss, spec_of(r), q, 0.05) == 3

    def test_bonferroni_equals_holm_complement(self):
        rng = np.random.default_rng(45)
        for _ in range(100):
            p = random_instance(rng, 3, 30)
            ss = build_score_set(p)
            m = ss.m
            k = int(rng.integers(1, m + 1))
            idx = rng.choice(m, size=k, replace=False)
            q = make_subset(ss, idx)
            alpha = 0.1
            holm = set(textbook_holm(p, alpha))
            expect = k - len(holm & set(idx.tolist()))
            assert fdp_bound(ss, spec_of(-math.inf), q, alpha) == expect

    def test_all_or_nothing_for_max(self):
        ss = build_score_set([0.01, 0.02, 0.03])
        q = make_subset(ss, [0, 1])
        assert fdp_bound(ss, spec_of(math.inf), q, 0.05) == 0
        assert fdp_bound(ss, spec_of(math.inf), q, 0.02) == 2

    def test_monotone_in_set(self):
        rng = np.random.default_rng(46)
        for _ in range(50):
            p = random_instance(rng)
            ss = build_score_set(p)
            m = ss.m
            small = rng.choice(m, size=max(1, m // 3), replace=False)
            extra = [i for i in range(m) if i not in set(small.tolist())]
            big = list(small) + extra[: max(1, len(extra) // 2)]
            r = float(rng.choice(FINITE_RS))
            e_small = fdp_bound(ss, spec_of(r), make_subset(ss, small), 0.1)
            e_big = fdp_bound(ss, spec_of(r), make_subset(ss, big), 0.1)
            assert e_small <= e_big

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(47)
        for _ in range(50):
            p = random_instance(rng)
            ss = build_score_set(p)
            q = make_subset(ss, range(ss.m))
            r = float(rng.choice(FINITE_RS))
            vals = [fdp_bound(ss, spec_of(r), q, a) for a in (0.01, 0.05, 0.2, 0.4)]
            assert all(x >= y for x, y in zip(vals, vals[1:]))


class TestSelection:
    def test_all_ones_empty(self):
        ss = build_score_set([1.0, 1.0, 1.0])
        for r in FINITE_RS:
            assert largest_fwer_set(ss, spec_of(r), 0.05).size == 0
            assert largest_fdp_set(ss, spec_of(r), 0.05, 0.2).size == 0

    def test_bonferroni_is_holm(self):
        rng = np.random.default_rng(48)
        for _ in range(100):
            p = random_instance(rng, 2, 80)
            ss = build_score_set(p)
            got = largest_fwer_set(ss, spec_of(-math.inf), 0.05)
            assert sorted(got.selected.tolist()) == textbook_holm(p, 0.05)

    def test_gamma_zero_equals_fwer(self):
        rng = np.random.default_rng(49)
        for _ in range(50):
            p = random_instance(rng)
            ss = build_score_set(p)
            r = float(rng.choice(FINITE_RS))
            a = largest_fwer_set(ss, spec_of(r), 0.1)
            b = largest_fdp_set(ss, spec_of(r), 0.1, 0.0)
            assert np.array_equal(np.sort(a.selected), np.sort(b.selected))

    def test_invalid_gamma(self):
        ss = build_score_set([0.1, 0.2])
        with pytest.raises(InvalidGamma):
            largest_fdp_set(ss, spec_of(1.0), 0.05, 1.0)
        with pytest.raises(InvalidGamma):
            largest_fdp_set(ss, spec_of(1.0), 0.05, -0.1)

    def test_custom_chain_matches_default(self):
        rng = np.random.default_rng(50)
        p = random_instance(rng, 8, 12)
        ss = build_score_set(p)
        order = np.argsort(p, kind="stable")
        chain = [order[:k] for k in range(1, ss.m + 1)]
        a = largest_fdp_set(ss, spec_of(0.0), 0.1, 0.25, chain=chain)
        b = largest_fdp_set(ss, spec_of(0.0), 0.1, 0.25)
        assert a.size == b.size
        assert np.array_equal(np.sort(a.selected), np.sort(b.selected))

    def test_selected_set_has_zero_fdp_bound(self):
        rng = np.random.default_rng(51)
        for _ in range(30):
            p = random_instance(rng)
            ss = build_score_set(p)
            r = float(rng.choice(FINITE_RS))
            res = largest_fwer_set(ss, spec_of(r), 0.1)
            if res.size:
                q = make_subset(ss, res.selected)
                assert fdp_bound(ss, spec_of(r), q, 0.1) == 0

    def test_guarantee_labels(self):
        ss = build_score_set([0.001, 0.002, 0.9])
        fw = largest_fwer_set(ss, spec_of(-math.inf), 0.05)
        fd = largest_fdp_set(ss, spec_of(-math.inf), 0.05, 0.2)
        assert "FWER" in fw.guarantee
        assert "FDP" in fd.guarantee


class TestBruteForce:
    def test_m1(self):
        ss = build_score_set([0.01])
        bf = brute_force_closure(ss, spec_of(1.0), 0.05)
        assert bf.t_closed[1]
        assert bf.e_bar[1] == 0

    def test_hand_example_m2(self):
        ss = build_score_set([0.01, 0.9])
        bf = brute_force_closure(ss, spec_of(-math.inf), 0.05)
        q01 = bf.mask_of(make_subset(ss, [0]))
        q1 = bf.mask_of(make_subset(ss, [1]))
        both = bf.mask_of(make_subset(ss, [0, 1]))
        assert bf.t_closed[q01] and not bf.t_closed[q1] and bf.t_closed[both]
        assert bf.e_bar[both] == 1

    def test_self_consistency(self):
        rng = np.random.default_rng(52)
        p = random_instance(rng, 5, 8)
        ss = build_score_set(p)
        bf = brute_force_closure(ss, spec_of(-0.5), 0.1)
        m = ss.m
        for mask in range(1, 1 << m):
            if bf.e_bar[mask] == 0:
                sub = mask
                while sub:
                    assert bf.t_closed[sub]
                    sub = (sub - 1) & mask

    def test_size_cap(self):
        ss = build_score_set(np.full(16, 0.5))
        with pytest.raises(OracleTooLarge):
            brute_force_closure(ss, spec_of(1.0), 0.05)


class TestShortcutOracleSmall:
    """Small-scale oracle equivalence; the full 1000-instance sweep lives in
    the acceptance suite."""

    def test_agreement(self):
        rng = np.random.default_rng(53)
        for _ in range(40):
            p = random_instance(rng, 3, 9)
            ss = build_score_set(p)
            m = ss.m
            r = float(rng.choice(FINITE_RS))
            alpha = float(rng.choice([0.05, 0.2]))
            sp = spec_of(r)
            bf = brute_force_closure(ss, sp, alpha)
            k = int(rng.integers(1, m + 1))
            idx = rng.choice(m, size=k, replace=False)
            q = make_subset(ss, idx)
            mask = bf.mask_of(q)
            assert post_hoc_reject(ss, sp, q, alpha) == bool(bf.t_closed[mask])
            assert fdp_bound(ss, sp, q, alpha) == int(bf.e_bar[mask])
            sel = sorted(largest_fwer_set(ss, sp, alpha).selected.tolist())
            oracle_sel = [i for i in range(m)
                          if bf.t_closed[bf.mask_of(make_subset(ss, [i]))]]
            assert sel == oracle_sel


class TestEvaluate:
    def test_bundle_consistency(self):
        ss = build_score_set([0.01, 0.2, 0.6])
        q = make_subset(ss, [0, 1])
        res = evaluate(ss, spec_of(1.0), q, 0.1)
        assert res.p_local <= res.p_closed <= 1.0
        assert res.coma >= 1.0
        assert res.fdp_bound == fdp_bound(ss, spec_of(1.0), q, 0.1)
        assert res.true_discoveries_lb == q.size - res.fdp_bound
        assert res.rejected == (res.p_closed <= 0.1)

    def test_empirical_backend_has_no_pvalues(self, table_r_pos1):
        ss = build_score_set([0.001, 0.2, 0.6])
        sp = LocalTestSpec(r=1.0, backend="EmpiricalTable", table=table_r_pos1)
        q = make_subset(ss, [0])
        res = evaluate(ss, sp, q, 0.05)
        assert math.isnan(res.p_local) and math.isnan(res.p_closed)
        assert res.rejected == post_hoc_reject(ss, sp, q, 0.05)
