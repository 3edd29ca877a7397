"""Simulation experiments behind the CLI `simulate` subcommand.

Each experiment returns (columns, rows, summary): plot-ready tabular data
plus an aggregate dict. All experiments are deterministic per seed.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .calibration import LocalTestSpec, gauss_asymptotic_threshold
from .closure import coma, largest_fdp_set, largest_fwer_set
from .gaussmodel import (
    GaussianModelConfig,
    asymptotic_power,
    asymptotic_type1,
    empirical_power,
    empirical_type1,
)
from .errors import Unsupported
from .scores import build_score_set, make_subset


def _rho_grid(step: float = 0.1):
    return [round(x, 10) for x in np.arange(0.0, 1.0 + step / 2, step)]


def type1_curve(m: int, r: float, alpha: float, n_trials: int, seed: int,
                rho_step: float = 0.1):
    """Empirical vs asymptotic type-I error of the Gaussian-calibrated
    M_r test across the correlation grid."""
    c = gauss_asymptotic_threshold(r, m, alpha)
    rows = []
    for i, rho in enumerate(_rho_grid(rho_step)):
        cfg = GaussianModelConfig(m=m, rho=rho, seed=seed + i)
        est = empirical_type1(cfg, r, c, n_trials)
        rows.append([rho, est.value, est.std_err, asymptotic_type1(rho, r, alpha)])
    return (["rho", "empirical", "std_err", "asymptotic"], rows,
            {"m": m, "r": r, "alpha": alpha, "threshold": c,
             "n_trials": n_trials, "seed": seed})


def power_curve(m: int, r: float, alpha: float, mu: float, pi: float,
                n_trials: int, seed: int, rho_step: float = 0.1):
    """Empirical vs asymptotic power across the correlation grid."""
    c = gauss_asymptotic_threshold(r, m, alpha)
    rows = []
    for i, rho in enumerate(_rho_grid(rho_step)):
        cfg = GaussianModelConfig(m=m, rho=rho, mu=mu, pi=pi, seed=seed + i)
        est = empirical_power(cfg, r, c, n_trials)
        try:
            asym = asymptotic_power(rho, r, alpha, mu, pi)
        except Unsupported:
            asym = math.nan
        rows.append([rho, est.value, est.std_err, asym])
    return (["rho", "empirical", "std_err", "asymptotic"], rows,
            {"m": m, "r": r, "alpha": alpha, "mu": mu, "pi": pi,
             "threshold": c, "n_trials": n_trials, "seed": seed})


def coma_curve(m: int, r: float, backend: str, rho: float,
               n_trials: int, seed: int, table=None):
    """Mean cost of multiplicity adjustment of the k-smallest-p prefix
    sets, averaged over simulated null instances."""
    spec = LocalTestSpec(r=r, backend=backend, table=table)
    rng = np.random.default_rng(seed)
    totals = np.zeros(m)
    for _ in range(n_trials):
        z0 = rng.standard_normal()
        z = rng.standard_normal(m)
        x = math.sqrt(rho) * z0 + math.sqrt(1.0 - rho) * z
        p = ndtr(-x)
        ss = build_score_set(p)
        order = np.argsort(p, kind="stable")
        for k in range(1, m + 1):
            q = make_subset(ss, order[:k])
            totals[k - 1] += coma(ss, spec, q)
    rows = [[k, totals[k - 1] / n_trials] for k in range(1, m + 1)]
    return (["set_size", "mean_coma"], rows,
            {"m": m, "r": r, "backend": backend, "rho": rho,
             "n_trials": n_trials, "seed": seed})


def _simulate_selection(m, rho, mu, pi, r, backend, alpha, gamma, n_trials,
                        seed, table, mode):
    spec = LocalTestSpec(r=r, backend=backend, table=table)
    rng = np.random.default_rng(seed)
    rows = []
    exceed = 0
    any_false = 0
    power_sum = 0.0
    for t in range(n_trials):
        z0 = rng.standard_normal()
        z = rng.standard_normal(m)
        mask = rng.random(m) < pi
        x = math.sqrt(rho) * z0 + math.sqrt(1.0 - rho) * z + mu * mask
        p = ndtr(-x)
        ss = build_score_set(p)
        if mode == "fwer":
            res = largest_fwer_set(ss, spec, alpha)
        else:
            res = largest_fdp_set(ss, spec, alpha, gamma)
        sel = res.selected
        n_false = int((~mask[sel]).sum()) if sel.size else 0
        n_true = int(mask[sel].sum()) if sel.size else 0
        n_sig = int(mask.sum())
        fdp = n_false / sel.size if sel.size else 0.0
        pw = n_true / n_sig if n_sig else 0.0
        power_sum += pw
        if mode == "fwer":
            any_false += int(n_false > 0)
        else:
            exceed += int(fdp > gamma)
        rows.append([t, int(sel.size), n_false, n_true, fdp, pw])
    summary = {"m": m, "rho": rho, "mu": mu, "pi": pi, "r": r,
               "backend": backend, "alpha": alpha, "n_trials": n_trials,
               "seed": seed, "mean_power": power_sum / n_trials}
    if mode == "fwer":
        summary["fwer"] = any_false / n_trials
        summary["fwer_std_err"] = math.sqrt(
            summary["fwer"] * (1 - summary["fwer"]) / n_trials)
    else:
        summary["gamma"] = gamma
        summary["prob_fdp_exceeds_gamma"] = exceed / n_trials
        summary["exceed_std_err"] = math.sqrt(
            summary["prob_fdp_exceeds_gamma"]
            * (1 - summary["prob_fdp_exceeds_gamma"]) / n_trials)
    return (["trial", "selected_size", "n_false", "n_true", "fdp", "power"],
            rows, summary)


def fwer_experiment(m, rho, mu, pi, r, backend, alpha, n_trials, seed,
                    table=None):
    """Zero-FDP selection: per-trial selected sets and the empirical
    familywise error rate."""
    return _simulate_selection(m, rho, mu, pi, r, backend, alpha, 0.0,
                               n_trials, seed, table, "fwer")


def fdp_experiment(m, rho, mu, pi, r, backend, alpha, gamma, n_trials, seed,
                   table=None):
    """Bounded-FDP selection: per-trial selected sets and the empirical
    probability that the realized FDP exceeds gamma."""
    return _simulate_selection(m, rho, mu, pi, r, backend, alpha, gamma,
                               n_trials, seed, table, "fdp")
