"""Positively equicorrelated Gaussian model: sampler and theory evaluators.

The model is X_i = mu * B_i + sqrt(rho) * Z_0 + sqrt(1 - rho) * Z_i with a
shared factor Z_0, B_i ~ Bernoulli(pi), and one-sided p_i = Phi(-X_i).
Conditionally on Z_0 the p-values are independent, which is what makes the
conditional moment g_{rho,r}(z_0) = E[p_i^r | Z_0 = z_0] the central object
of the asymptotic calibration and power formulas implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, logsumexp, roots_hermitenorm
from scipy.stats import norm

from .errors import InvalidLevel, OutOfRange, Unsupported

_QUAD_NODES = 192


@dataclass(frozen=True)
class GaussianModelConfig:
    """Model parameters (m, rho, mu, pi) plus the RNG seed.

    mu = math.inf is the explicit infinitely-strong-signal sentinel used
    by the power theory branches.
    """

    m: int
    rho: float
    mu: float = 0.0
    pi: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError(f"rho must be in [0,1], got {self.rho}")
        if not (0.0 <= self.pi <= 1.0):
            raise ValueError(f"pi must be in [0,1], got {self.pi}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")


@dataclass(frozen=True)
class PowerEstimate:
    value: float
    std_err: float
    n_trials: int
    kind: str  # one of {"TypeI", "Power", "FDP", "FWER"}


def sample_x_block(config: GaussianModelConfig, n: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw n trials of the model as an (n, m) X matrix plus signal mask."""
    m = config.m
    z0 = rng.standard_normal(n)
    z = rng.standard_normal((n, m))
    x = math.sqrt(config.rho) * z0[:, None] + math.sqrt(1.0 - config.rho) * z
    if config.pi > 0:
        mask = rng.random((n, m)) < config.pi
        if math.isinf(config.mu):
            x = np.where(mask, np.inf, x)
        else:
            x = x + config.mu * mask
    else:
        mask = np.zeros((n, m), dtype=bool)
    return x, mask


def sample_model(config: GaussianModelConfig, n_trials: int, chunk: int = 1024):
    """Stream (X vector, signal mask) pairs, one per trial.

    Deterministic per seed; generation happens in chunks internally but the
    yielded sequence depends only on (config, n_trials).
    """
    rng = np.random.default_rng(config.seed)
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        x, mask = sample_x_block(config, n, rng)
        for i in range(n):
            yield x[i], mask[i]
        done += n


def _herme_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    # probabilists' Hermite: sum w f(x) approximates E f(N(0,1)) after
    # dividing by sqrt(2 pi). scipy's root solver stays finite at high
    # orders where the numpy recurrence overflows.
    x, w = roots_hermitenorm(n)
    with np.errstate(divide="ignore"):
        return x, np.log(w) - 0.5 * math.log(2.0 * math.pi)


def g_rho_r(z0: float, rho: float, r: float, nodes: int = _QUAD_NODES) -> float:
    """Conditional moment E[Phi(-sqrt(rho) z0 - sqrt(1-rho) Z)^r].

    Finite iff r (rho - 1) < 1 (always for r >= 0); outside that region the
    integral diverges and math.inf is returned as the sentinel. rho = 1 is
    the degenerate Phi(-z0)^r and rho = 0 the constant 1/(r+1) for r > -1.
    """
    if r < 0 and rho < 1.0 and (-r) * (1.0 - rho) >= 1.0:
        return math.inf
    if rho == 1.0:
        return float(np.exp(r * log_ndtr(-z0)))
    if rho == 0.0:
        return 1.0 / (r + 1.0)
    x, logw = _herme_nodes(nodes)
    logp = log_ndtr(-math.sqrt(rho) * z0 - math.sqrt(1.0 - rho) * x)
    return float(np.exp(logsumexp(logw + r * logp)))


def g_rho_log(z0: float, rho: float, nodes: int = _QUAD_NODES) -> float:
    """E[log Phi(-sqrt(rho) z0 - sqrt(1-rho) Z)], the r = 0 analogue used
    by the geometric-mean branch of the asymptotic calibration."""
    if rho == 1.0:
        return float(log_ndtr(-z0))
    if rho == 0.0:
        return -1.0  # E[log U] for U uniform
    x, logw = _herme_nodes(nodes)
    logp = log_ndtr(-math.sqrt(rho) * z0 - math.sqrt(1.0 - rho) * x)
    return float(np.sum(np.exp(logw) * logp))


def _bisect_monotone(fn, target: float, decreasing: bool,
                     lo: float = -40.0, hi: float = 40.0,
                     tol: float = 1e-10) -> float:
    f_lo, f_hi = fn(lo), fn(hi)
    top, bot = (f_lo, f_hi) if decreasing else (f_hi, f_lo)
    if not (bot <= target <= top):
        raise OutOfRange(f"target {target} outside range [{bot}, {top}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = fn(mid)
        if abs(f_mid - target) < tol or hi - lo < 1e-13:
            return mid
        if (f_mid > target) == decreasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def g_rho_r_inverse(target: float, rho: float, r: float) -> float:
    """Invert z0 -> g_{rho,r}(z0) by bisection on [-40, 40].

    g is decreasing in z0 for r >= 0 and increasing for r < 0. rho = 0
    returns math.inf by convention (the conditional moment is constant,
    and the convention g_{0,r}^{-1} = inf makes Phi(-inf) = 0 the correct
    degenerate probability).
    """
    if rho == 0.0:
        return math.inf
    return _bisect_monotone(lambda z: g_rho_r(z, rho, r), target,
                            decreasing=(r >= 0))


def g_rho_log_inverse(target: float, rho: float) -> float:
    """Inverse of the E[log p] analogue (decreasing in z0)."""
    if rho == 0.0:
        return math.inf
    return _bisect_monotone(lambda z: g_rho_log(z, rho), target,
                            decreasing=True)


def asymptotic_type1(rho: float, r: float, alpha: float) -> float:
    """Limit of the type-I error of the generalized-mean test calibrated
    at the Gaussian-asymptotic threshold, as a function of rho.

    For r <= -1 the limit is the indicator alpha * 1{rho = 0}; otherwise
    it is Phi(-z*) where z* is the shared-factor quantile at which the
    conditional moment crosses the calibrated cutoff.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")
    if r <= -1.0:
        return alpha if rho == 0.0 else 0.0
    if rho == 0.0:
        return 0.0
    from .calibration import gauss_asymptotic_threshold

    c = gauss_asymptotic_threshold(r, 2, alpha)  # m-free for r > -1
    if r == 0.0:
        z = g_rho_log_inverse(math.log(c), rho)
    else:
        try:
            z = g_rho_r_inverse(c ** r, rho, r)
        except OutOfRange:
            # cutoff below (r > 0) or above (r < 0) the reachable moment
            # range: the limiting rejection probability is 0 or 1
            g_hi = g_rho_r(-40.0, rho, r)
            g_lo = g_rho_r(40.0, rho, r)
            if r > 0:
                return 0.0 if c ** r < g_lo else 1.0
            return 0.0 if c ** r > g_hi else 1.0
    return float(ndtr(-z))


def asymptotic_power(rho: float, r: float, alpha: float,
                     mu: float, pi: float) -> float:
    """Asymptotic power of the calibrated test under signal (mu, pi).

    Exact special cases: pi = 1 with mu = inf gives 1; mu = 0 or pi = 0
    reduce to the type-I limit; pi in (0,1) with mu = inf solves the
    inflated-target quantile. The general finite-mu branch evaluates
    Pr{pi g(Z0 + mu/sqrt(rho)) + (1-pi) g(Z0) <= c^r} by locating the
    crossing point of the (monotone in Z0) left side. Only r >= 0 has a
    closed form; r < 0 callers should use empirical_power.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")
    if mu == 0.0 or pi == 0.0:
        return asymptotic_type1(rho, r, alpha)
    if pi == 1.0 and math.isinf(mu):
        return 1.0
    if r < 0:
        raise Unsupported("no closed-form power for r < 0; use empirical_power")
    from .calibration import gauss_asymptotic_threshold

    c = gauss_asymptotic_threshold(r, 2, alpha)
    if math.isinf(mu):
        if r == 0.0:
            # a positive fraction of exact zeros sends the geometric mean to 0
            return 1.0
        if rho == 0.0:
            return 0.0
        try:
            z = g_rho_r_inverse(c ** r / (1.0 - pi), rho, r)
        except OutOfRange:
            return 1.0 if c ** r / (1.0 - pi) >= g_rho_r(-40.0, rho, r) else 0.0
        return float(ndtr(-z))
    if rho == 0.0:
        raise Unsupported("rho = 0 with finite mu has a degenerate 0/1 limit; "
                          "use empirical_power")
    shift = mu / math.sqrt(rho)
    if r == 0.0:
        target = math.log(c)
        fn = lambda z: pi * g_rho_log(z + shift, rho) + (1 - pi) * g_rho_log(z, rho)
    else:
        target = c ** r
        fn = lambda z: pi * g_rho_r(z + shift, rho, r) + (1 - pi) * g_rho_r(z, rho, r)
    try:
        z = _bisect_monotone(fn, target, decreasing=True)
    except OutOfRange:
        return 1.0 if fn(-40.0) <= target else 0.0
    return float(ndtr(-z))


def detection_boundary(rho: float, gamma_sparsity: float) -> float:
    """Critical signal-strength exponent c* for sparsity gamma and
    correlation rho, with mu = sqrt(2 c log m)."""
    return max(0.0, 1.0 - math.sqrt(gamma_sparsity * (1.0 - rho))) ** 2


def _reject_mask(p: np.ndarray, r: float, c: float) -> np.ndarray:
    """Per-row rejection of the M_r test at mean-scale threshold c."""
    if r == math.inf:
        return p.max(axis=1) <= c
    if r == -math.inf:
        return p.shape[1] * p.min(axis=1) <= c
    if r == 0.0:
        return np.log(p).mean(axis=1) <= math.log(c)
    with np.errstate(over="ignore", divide="ignore"):
        s = (p ** r).mean(axis=1)
    if r > 0:
        return s <= c ** r
    return s >= c ** r


def _mc_estimate(config: GaussianModelConfig, r: float, c: float,
                 n_trials: int, kind: str, chunk: int = 4096) -> PowerEstimate:
    rng = np.random.default_rng(config.seed)
    hits = 0
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        x, _ = sample_x_block(config, n, rng)
        p = ndtr(-x)
        np.maximum(p, np.finfo(np.float64).tiny, out=p)
        hits += int(_reject_mask(p, r, c).sum())
        done += n
    value = hits / n_trials
    se = math.sqrt(value * (1.0 - value) / n_trials)
    return PowerEstimate(value=value, std_err=se, n_trials=n_trials, kind=kind)


def empirical_type1(config: GaussianModelConfig, r: float, c: float,
                    n_trials: int) -> PowerEstimate:
    """Monte Carlo rejection rate of the M_r test at threshold c under the
    null (config.mu is ignored; the model is sampled with mu = 0)."""
    null_cfg = GaussianModelConfig(m=config.m, rho=config.rho, mu=0.0,
                                   pi=0.0, seed=config.seed)
    return _mc_estimate(null_cfg, r, c, n_trials, "TypeI")


def empirical_power(config: GaussianModelConfig, r: float, c: float,
                    n_trials: int) -> PowerEstimate:
    """Monte Carlo rejection rate of the M_r test at threshold c under the
    configured signal model."""
    return _mc_estimate(config, r, c, n_trials, "Power")


def quantile_normal_ppf(q: float) -> float:
    return float(norm.ppf(q))
