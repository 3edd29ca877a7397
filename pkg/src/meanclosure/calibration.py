"""Critical values for generalized-mean local tests.

Three backends produce the mean-scale cutoff c(s, alpha) for a test of s
p-values at level alpha:

- ``ArbitraryDep``: the closed-form worst-case-over-all-dependence rule
  c = alpha / vovk_alpha_factor(r, s);
- ``GaussAsymptotic``: the large-m equicorrelated-Gaussian cutoff
  gauss_asymptotic_threshold(r, s, alpha), which is never larger than
  alpha;
- ``EmpiricalTable``: Monte Carlo worst-case-over-correlation quantiles
  on a size grid, interpolated monotonically between grid points.

threshold_fn converts the cutoff to the separable sum scale g(s, alpha)
consumed by the closed-testing algorithms, together with its inverse in
alpha where a closed form exists (needed for adjusted p-values).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import log_ndtr, logsumexp, ndtr, roots_hermitenorm
from scipy.stats import norm

from .errors import InvalidLevel, InvalidSize, UnsupportedInverse

_RHO_STEP = 0.01
_QUAD_NODES = 192


def harmonic_root(m: int, dps: int = 40) -> mpmath.mpf:
    """The unique positive root y_m of y^2 = m ((y+1) log(y+1) - y).

    Solved by bracketed bisection in mpmath because the residual of the
    defining equation is required far below the float64 ULP at this
    magnitude (y_1000 is about 8e3, so y^2 is about 6.4e7 and one double
    ULP of y^2 is already about 1e-8).
    """
    if m < 3:
        raise InvalidSize(f"harmonic root defined for m >= 3, got {m}")
    with mpmath.workdps(dps):
        mm = mpmath.mpf(m)
        f = lambda y: y * y - mm * ((y + 1) * mpmath.log(y + 1) - y)
        lo, hi = mpmath.mpf("1e-8"), mpmath.mpf(10) ** 6 * mm
        # f < 0 near 0 (for m >= 3) and > 0 at the upper end
        for _ in range(220):
            mid = (lo + hi) / 2
            if f(mid) < 0:
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2


def vovk_alpha_factor(r: float, m: int) -> float:
    """Inflation factor a_{r,m} such that rejecting when M_r <= alpha / a
    is valid at level alpha under arbitrary dependence.

    Branches: (r+1)^{1/r} for r > -1 (limits 1 at r = inf and e at r = 0);
    for r = -1, m for m <= 2 and (y_m + m)^2 / (m (y_m + 1)) for m >= 3
    with y_m from harmonic_root (the literal reading of the source
    expression (y_m+1)/(y_m+m)^2 is below 1 and is its reciprocal up to
    the 1/m normalization; the value returned here is the multiplicative
    inflation, which grows like log m); for r < -1,
    (r/(r+1)) m^{1+1/r}, with limit m at r = -inf. The M_{-inf} statistic
    already carries the factor m, so a_{-inf,m} = m corresponds to the
    plain Bonferroni rule m min p <= alpha.
    """
    if m < 1:
        raise InvalidSize(f"m must be >= 1, got {m}")
    if r == math.inf:
        return 1.0
    if r == -math.inf:
        return float(m)
    if r == 0.0:
        return math.e
    if r > -1.0:
        return float((r + 1.0) ** (1.0 / r))
    if r == -1.0:
        if m <= 2:
            return float(m)
        y = float(harmonic_root(m))
        return (y + m) ** 2 / (m * (y + 1.0))
    return float((r / (r + 1.0)) * m ** (1.0 + 1.0 / r))


def _case_b_moment_grid(r: float, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Conditional moments E[p^r | Z0 = z*] (or E[log p] for r = 0) over
    the rho grid, with z* = -Phi^{-1}(alpha), vectorized over rho."""
    z_star = float(-norm.ppf(alpha))
    rhos = np.round(np.arange(0.0, 1.0 + _RHO_STEP / 2, _RHO_STEP), 10)
    x, w = roots_hermitenorm(_QUAD_NODES)
    logw = np.log(w) - 0.5 * math.log(2.0 * math.pi)
    interior = rhos[(rhos > 0) & (rhos < 1)]
    arg = (-np.sqrt(interior)[:, None] * z_star
           - np.sqrt(1.0 - interior)[:, None] * x[None, :])
    logp = log_ndtr(arg)
    if r == 0.0:
        vals_int = np.sum(np.exp(logw)[None, :] * logp, axis=1)
        v0 = -1.0
        v1 = float(log_ndtr(-z_star))
    else:
        vals_int = logsumexp(logw[None, :] + r * logp, axis=1)
        vals_int = np.exp(vals_int)
        v0 = 1.0 / (r + 1.0)
        v1 = float(np.exp(r * log_ndtr(-z_star)))
    vals = np.concatenate(([v0], vals_int, [v1]))
    return rhos, vals


def gauss_asymptotic_threshold(r: float, m: int, alpha: float) -> float:
    """Large-m cutoff c_r(m, alpha) for the equicorrelated Gaussian null.

    Four cases: for r > 0, min{alpha, (r/(r+1))^{1/r}}; for -1 < r <= 0,
    the worst case over the correlation grid of step 0.01 of the
    conditional moment at z* = -Phi^{-1}(alpha), mapped back to the mean
    scale; for r = -1, alpha/(1 + alpha log m); for r < -1,
    alpha m^{1/|r| - 1}. All cases are <= alpha.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")
    if m < 1:
        raise InvalidSize(f"m must be >= 1, got {m}")
    if not math.isfinite(r):
        raise InvalidSize("gauss asymptotic threshold requires finite r")
    if r > 0:
        return min(alpha, (r / (r + 1.0)) ** (1.0 / r))
    if r == 0.0:
        _, vals = _case_b_moment_grid(0.0, alpha)
        return float(np.exp(vals.min()))
    if r > -1.0:
        _, vals = _case_b_moment_grid(r, alpha)
        return float(vals.max() ** (1.0 / r))
    if r == -1.0:
        return alpha / (1.0 + alpha * math.log(m))
    return alpha * m ** (1.0 / abs(r) - 1.0)


def asymptotic_threshold_ratio(r: float, m: int, alpha: float) -> float:
    """Ratio of the Gaussian-asymptotic cutoff to the arbitrary-dependence
    cutoff alpha / a_{r,m}, i.e. the relaxation bought by the Gaussian
    assumption.

    For r > 0 (alpha at or below the cap) and r < -1 this is the exact
    quotient gauss_asymptotic_threshold * a_{r,m} / alpha, which collapses
    to (r+1)^{1/r} and |r|/(|r|-1) respectively. At exactly r = -1 and
    r = 0 the quotient is reported under the large-m conventions
    a_{-1,m} -> log m and c_0 -> (alpha/e)(|log alpha|+1)/|log alpha|,
    giving log m/(alpha log m + 1) and (|log alpha|+1)/|log alpha|; the
    finite-m root factor and the grid threshold deviate from these
    conventions (see the package notes).
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")
    if r == 0.0:
        la = abs(math.log(alpha))
        c0 = (alpha / math.e) * (la + 1.0) / la
        return c0 * math.e / alpha
    if r == -1.0:
        logm = math.log(m)
        c = alpha / (1.0 + alpha * logm)
        return c * logm / alpha
    return gauss_asymptotic_threshold(r, m, alpha) * vovk_alpha_factor(r, m) / alpha


def _harmonic_factor_array(sizes: np.ndarray) -> np.ndarray:
    """Vectorized float64 inflation factors for r = -1 over integer sizes.

    Sizes 1 and 2 return the size itself; larger sizes solve the root
    equation by bisection in parallel. Accuracy is float64-limited (the
    scalar path goes through mpmath when full precision matters).
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    out = np.where(sizes <= 2, sizes, np.nan)
    big = sizes >= 3
    if np.any(big):
        mm = sizes[big]
        lo = np.full(mm.shape, 0.1)
        hi = 1e6 * mm
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            f = mid * mid - mm * ((mid + 1.0) * np.log1p(mid) - mid)
            neg = f < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        y = 0.5 * (lo + hi)
        out[big] = (y + mm) ** 2 / (mm * (y + 1.0))
    return out


@dataclass(frozen=True)
class CalibrationTable:
    """Monte Carlo critical values c*(s, alpha) on a size grid.

    Sizes <= 10 are always exact grid entries; larger sizes are served by
    a monotone piecewise-cubic interpolant over (log s, moment scale).
    """

    r: float
    alpha: float
    grid_sizes: tuple
    grid_values: tuple
    n_trials: int
    seed: int
    rho_grid_step: float = _RHO_STEP
    interpolant_knots: tuple = ()
    warnings: tuple = ()

    def _interp(self):
        if len(self.interpolant_knots) < 2:
            return None
        xs = np.array([k[0] for k in self.interpolant_knots])
        ys = np.array([k[1] for k in self.interpolant_knots])
        return PchipInterpolator(xs, ys, extrapolate=False)

    def _to_fit_scale(self, c: float) -> float:
        if self.r == 0.0:
            return math.log(c)
        return c ** self.r

    def _from_fit_scale(self, y: float) -> float:
        if self.r == 0.0:
            return math.exp(y)
        return y ** (1.0 / self.r)

    def lookup(self, s: int) -> float:
        """Cutoff for size s: bit-exact for grid sizes, interpolated in
        between, clamped to the nearest knot outside the grid span."""
        sizes = self.grid_sizes
        try:
            i = sizes.index(s)
            return self.grid_values[i]
        except ValueError:
            pass
        if s < sizes[0]:
            return self.grid_values[0]
        if s > sizes[-1]:
            raise InvalidSize(f"table covers sizes up to {sizes[-1]}, got {s}")
        f = self._interp()
        if f is None:
            raise InvalidSize(f"size {s} not on grid and no interpolant available")
        return self._from_fit_scale(float(f(math.log(s))))

    def lookup_array(self, sizes: np.ndarray) -> np.ndarray:
        """Vectorized lookup for integer sizes 1..max_size."""
        sizes = np.asarray(sizes, dtype=np.int64)
        if sizes.max(initial=0) > self.grid_sizes[-1]:
            raise InvalidSize(f"table covers sizes up to {self.grid_sizes[-1]}")
        out = np.empty(sizes.shape, dtype=np.float64)
        grid = np.array(self.grid_sizes, dtype=np.int64)
        vals = np.array(self.grid_values, dtype=np.float64)
        pos = np.searchsorted(grid, sizes)
        exact = (pos < grid.size) & (grid[np.minimum(pos, grid.size - 1)] == sizes)
        out[exact] = vals[pos[exact]]
        rest = ~exact
        if np.any(rest):
            f = self._interp()
            if f is None:
                raise InvalidSize("off-grid size with no interpolant available")
            y = f(np.log(sizes[rest]))
            if self.r == 0.0:
                out[rest] = np.exp(y)
            else:
                out[rest] = y ** (1.0 / self.r)
        return out

    def max_size(self) -> int:
        return self.grid_sizes[-1]

    def to_json(self) -> str:
        return json.dumps({
            "r": self.r,
            "alpha": self.alpha,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "rho_grid_step": self.rho_grid_step,
            "grid": [[s, c] for s, c in zip(self.grid_sizes, self.grid_values)],
            "interpolant_knots": [list(k) for k in self.interpolant_knots],
            "warnings": list(self.warnings),
        })

    @classmethod
    def from_json(cls, text: str) -> "CalibrationTable":
        d = json.loads(text)
        return cls(
            r=d["r"], alpha=d["alpha"],
            grid_sizes=tuple(int(s) for s, _ in d["grid"]),
            grid_values=tuple(float(c) for _, c in d["grid"]),
            n_trials=int(d["n_trials"]), seed=int(d["seed"]),
            rho_grid_step=float(d["rho_grid_step"]),
            interpolant_knots=tuple(tuple(k) for k in d["interpolant_knots"]),
            warnings=tuple(d.get("warnings", ())),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "CalibrationTable":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _grid_sizes(max_m: int) -> list[int]:
    sizes = list(range(1, min(10, max_m) + 1))
    sizes += list(range(15, max_m + 1, 5))
    if sizes[-1] != max_m:
        sizes.append(max_m)
    return sizes


def empirical_calibration(r: float, alpha: float, max_m: int,
                          n_trials: int, seed: int,
                          chunk: int = 8192) -> CalibrationTable:
    """Monte Carlo calibration table for the equicorrelated Gaussian null.

    For every grid size s the cutoff is the worst case over the
    correlation grid {0, 0.01, ..., 1} of the conservative empirical
    alpha-quantile (order statistic ceil(alpha n), lower side) of the
    M_r statistic on the first s coordinates. Common random numbers are
    reused across correlations and sizes, so tables built from the same
    seed at different alpha are entrywise monotone in alpha. rho = 1 is
    degenerate (all p-values equal one uniform) and contributes the
    analytic quantile alpha.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")
    if max_m < 1:
        raise InvalidSize(f"max_m must be >= 1, got {max_m}")
    warnings = []
    if n_trials < 10_000:
        warnings.append(f"n_trials={n_trials} below the recommended 10000; "
                        "quantiles may be noisy")
    sizes = _grid_sizes(max_m)
    n_sizes = len(sizes)
    size_idx = np.array(sizes) - 1
    rhos = np.round(np.arange(0.0, 1.0, _RHO_STEP), 10)
    k = max(1, math.ceil(alpha * n_trials))

    # common random numbers: one base draw reused by every correlation,
    # which makes the worst-rho comparison and the alpha-monotonicity of
    # same-seed tables exact rather than statistical
    rng = np.random.default_rng(seed)
    z0 = rng.standard_normal(n_trials)
    z = rng.standard_normal((n_trials, max_m))
    inv_sizes = 1.0 / np.array(sizes, dtype=np.float64)
    c_star = np.full(n_sizes, np.inf)
    stats = np.empty((n_trials, n_sizes), dtype=np.float64)
    for rho in rhos:
        done = 0
        while done < n_trials:
            n = min(chunk, n_trials - done)
            x = (math.sqrt(rho) * z0[done:done + n, None]
                 + math.sqrt(1.0 - rho) * z[done:done + n])
            logp = log_ndtr(-x)
            if r == 0.0:
                h = logp
            else:
                with np.errstate(over="ignore"):
                    h = np.exp(r * logp)
            stats[done:done + n] = np.cumsum(h, axis=1)[:, size_idx] * inv_sizes
            done += n
        # conservative order-statistic quantile of M_r on the mean scale;
        # for r < 0 a small M_r value is a LARGE moment sum, so the
        # alpha-quantile of M_r is the k-th largest moment
        if r < 0:
            part = np.partition(stats, n_trials - k, axis=0)[n_trials - k]
        else:
            part = np.partition(stats, k - 1, axis=0)[k - 1]
        if r == 0.0:
            c_rho = np.exp(part)
        else:
            with np.errstate(divide="ignore"):
                c_rho = part ** (1.0 / r)
        np.minimum(c_star, c_rho, out=c_star)
    # rho = 1: all p-values coincide, M_r = p_1, analytic quantile alpha
    c_star = np.minimum(c_star, alpha)

    values = tuple(float(v) for v in c_star)
    table = CalibrationTable(r=r, alpha=alpha, grid_sizes=tuple(sizes),
                             grid_values=values, n_trials=n_trials, seed=seed,
                             warnings=tuple(warnings))
    big = [i for i, s in enumerate(sizes) if s >= 10] or list(range(n_sizes))
    if len(big) >= 2:
        xs = [math.log(sizes[i]) for i in big]
        ys = [table._to_fit_scale(values[i]) for i in big]
        knots = tuple((x, y) for x, y in zip(xs, ys))
        table = CalibrationTable(r=r, alpha=alpha, grid_sizes=tuple(sizes),
                                 grid_values=values, n_trials=n_trials,
                                 seed=seed, interpolant_knots=knots,
                                 warnings=tuple(warnings))
    return table


@dataclass(frozen=True)
class LocalTestSpec:
    """The local test family: exponent r plus a calibration backend."""

    r: float
    backend: str = "ArbitraryDep"  # or GaussAsymptotic, EmpiricalTable
    table: CalibrationTable | None = None

    def __post_init__(self):
        if self.backend not in ("ArbitraryDep", "GaussAsymptotic", "EmpiricalTable"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "GaussAsymptotic" and not math.isfinite(self.r):
            raise ValueError("GaussAsymptotic backend requires finite r")
        if self.backend == "EmpiricalTable":
            if self.table is None:
                raise ValueError("EmpiricalTable backend requires a table")
            if self.table.r != self.r:
                raise ValueError("table exponent does not match spec exponent")


@dataclass(frozen=True)
class ThresholdFn:
    """Separable sum-scale threshold g(s, alpha) with optional inverse.

    g(s, alpha) = s c^r for r > 0, s log c for r = 0, -s c^r for r < 0,
    where c = c(s, alpha) is the backend's mean-scale cutoff. alpha_of
    solves g(s, alpha) = Q for alpha (the adjusted local p-value of a sum
    Q over s terms); it is None for the empirical backend.
    """

    r: float
    backend: str
    g: callable = field(repr=False, default=None)
    alpha_of: callable = field(repr=False, default=None)

    @property
    def has_inverse(self) -> bool:
        return self.alpha_of is not None

    def require_inverse(self):
        if self.alpha_of is None:
            raise UnsupportedInverse(
                f"backend {self.backend} has no closed-form inverse in alpha")
        return self.alpha_of


def _sum_scale(r: float, s: int, c: float) -> float:
    if r > 0:
        return s * c ** r
    if r == 0.0:
        return s * math.log(c) if c > 0 else -math.inf
    return -s * c ** r if c > 0 else -math.inf


def _mean_scale_from_sum(r: float, s: int, q: float) -> float:
    """Recover the mean-scale statistic value M from a sum Q of h terms."""
    if r > 0:
        return (q / s) ** (1.0 / r) if q > 0 else 0.0
    if r == 0.0:
        return math.exp(q / s)
    return (-q / s) ** (1.0 / r) if q < 0 else math.inf if q == 0 else 0.0


def threshold_fn(spec: LocalTestSpec, m: int) -> ThresholdFn:
    """Build the sum-scale threshold for sizes 1..m under the given spec."""
    if m < 1:
        raise InvalidSize(f"m must be >= 1, got {m}")
    r = spec.r
    if not math.isfinite(r):
        raise InvalidSize("threshold_fn requires finite r; order-statistic "
                          "rules handle r = +-inf directly")

    if spec.backend == "ArbitraryDep":
        factors = {}

        def cutoff(s, alpha):
            if s not in factors:
                factors[s] = vovk_alpha_factor(r, s)
            return alpha / factors[s]

        def g(s, alpha):
            return _sum_scale(r, s, cutoff(s, alpha))

        def alpha_of(s, q):
            mval = _mean_scale_from_sum(r, s, q)
            if s not in factors:
                factors[s] = vovk_alpha_factor(r, s)
            return min(1.0, max(0.0, mval * factors[s]))

        return ThresholdFn(r=r, backend=spec.backend, g=g, alpha_of=alpha_of)

    if spec.backend == "GaussAsymptotic":
        def g(s, alpha):
            return _sum_scale(r, s, gauss_asymptotic_threshold(r, s, alpha))

        if r > 0:
            cap = (r / (r + 1.0)) ** (1.0 / r)

            def alpha_of(s, q):
                mval = _mean_scale_from_sum(r, s, q)
                return mval if mval <= cap else 1.0
        elif r == -1.0:
            def alpha_of(s, q):
                mval = _mean_scale_from_sum(r, s, q)
                denom = 1.0 - mval * math.log(s)
                if denom <= 0:
                    return 1.0
                return min(1.0, mval / denom)
        elif r < -1.0:
            def alpha_of(s, q):
                mval = _mean_scale_from_sum(r, s, q)
                return min(1.0, mval * s ** (1.0 - 1.0 / abs(r)))
        else:
            # -1 < r <= 0: the cutoff is a strictly increasing function of
            # alpha (independent of s); invert numerically
            def alpha_of(s, q):
                mval = _mean_scale_from_sum(r, s, q)
                if mval <= 0:
                    return 0.0
                lo, hi = 1e-12, 1.0 - 1e-12
                if gauss_asymptotic_threshold(r, s, hi) < mval:
                    return 1.0
                if gauss_asymptotic_threshold(r, s, lo) >= mval:
                    return lo
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if gauss_asymptotic_threshold(r, s, mid) < mval:
                        lo = mid
                    else:
                        hi = mid
                return hi

        return ThresholdFn(r=r, backend=spec.backend, g=g, alpha_of=alpha_of)

    # EmpiricalTable: fixed-alpha decisions only
    table = spec.table
    if table.max_size() < m:
        raise InvalidSize(f"table covers sizes up to {table.max_size()}, "
                          f"need {m}")

    def g(s, alpha):
        if not math.isclose(alpha, table.alpha, rel_tol=0, abs_tol=1e-12):
            raise InvalidLevel(f"table calibrated at alpha={table.alpha}, "
                               f"requested {alpha}")
        return _sum_scale(r, s, table.lookup(s))

    return ThresholdFn(r=r, backend=spec.backend, g=g, alpha_of=None)


def g_array(spec: LocalTestSpec, m: int, alpha: float) -> np.ndarray:
    """Sum-scale thresholds for all sizes at once: G[s] = g(s, alpha) for
    s in 1..m, with G[0] = NaN. This is the precomputation that makes the
    closed-testing shortcuts O(m)."""
    if not (0.0 < alpha < 1.0):
        raise InvalidLevel(f"alpha must be in (0,1), got {alpha}")
    if m < 1:
        raise InvalidSize(f"m must be >= 1, got {m}")
    r = spec.r
    if not math.isfinite(r):
        raise InvalidSize("g_array requires finite r")
    s = np.arange(0, m + 1, dtype=np.float64)
    s[0] = np.nan
    if spec.backend == "ArbitraryDep":
        if r > -1.0 or r == 0.0:
            c = alpha / vovk_alpha_factor(r, 1)  # size-free factor
        elif r == -1.0:
            factors = _harmonic_factor_array(np.arange(0, m + 1))
            factors[0] = np.nan
            c = alpha / factors
        else:
            factors = (r / (r + 1.0)) * s ** (1.0 + 1.0 / r)
            c = alpha / factors
    elif spec.backend == "GaussAsymptotic":
        if r > 0:
            c = min(alpha, (r / (r + 1.0)) ** (1.0 / r))
        elif r > -1.0 or r == 0.0:
            c = gauss_asymptotic_threshold(r, 1, alpha)
        elif r == -1.0:
            with np.errstate(invalid="ignore", divide="ignore"):
                c = alpha / (1.0 + alpha * np.log(s))
        else:
            c = alpha * s ** (1.0 / abs(r) - 1.0)
    else:
        table = spec.table
        if not math.isclose(alpha, table.alpha, rel_tol=0, abs_tol=1e-12):
            raise InvalidLevel(f"table calibrated at alpha={table.alpha}, "
                               f"requested {alpha}")
        c = np.empty(m + 1)
        c[0] = np.nan
        c[1:] = table.lookup_array(np.arange(1, m + 1))
    if np.ndim(c) == 0:
        # size-free cutoff: fold the scalar into the size ramp in place
        # (keeps g_array to a single O(m) array for the large-m shortcuts)
        if r == 0.0:
            s *= math.log(c)
        else:
            s *= math.copysign(1.0, r) * float(c) ** r
        return s
    if r > 0:
        return s * c ** r
    if r == 0.0:
        return s * np.log(c)
    return -s * c ** r
