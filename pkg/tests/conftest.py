"""Shared fixtures and independent reference implementations.

The reference implementations here are deliberately written from the
textbook definitions, without reusing any package internals, so that the
package and the tests can only agree by both being correct.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from meanclosure import empirical_calibration


def textbook_holm(p, alpha):
    """Step-down Holm: sorted indices rejected at level alpha.

    Walks the sorted p-values and stops at the first index i (0-based)
    with p_(i) > alpha / (m - i); everything before it is rejected.
    """
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    order = np.argsort(p, kind="stable")
    k = m
    for i in range(m):
        if p[order[i]] > alpha / (m - i):
            k = i
            break
    return sorted(order[:k].tolist())


def random_instance(rng, m_lo=3, m_hi=12):
    """A random p-value vector with a mix of tiny, moderate and large values."""
    m = int(rng.integers(m_lo, m_hi + 1))
    u = rng.random(m)
    # squaring skews toward small p so closures actually reject sometimes
    p = np.where(rng.random(m) < 0.5, u ** 3, u)
    return p


@pytest.fixture(scope="session")
def table_r_pos1():
    """Empirical calibration table for the arithmetic mean, alpha=0.05, m=200."""
    return empirical_calibration(1.0, 0.05, 200, n_trials=20000, seed=1301)


@pytest.fixture(scope="session")
def table_r_neg1():
    """Empirical calibration table for the harmonic mean, alpha=0.05, m=200."""
    return empirical_calibration(-1.0, 0.05, 200, n_trials=20000, seed=1302)


def assert_close(a, b, tol, msg=""):
    assert math.isfinite(a) and math.isfinite(b), (a, b, msg)
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol}) {msg}"
