"""Command-line interface.

Subcommands: combine, calibrate, adjust, coma, bound, select, simulate.
Input is CSV with one p-value per row (optional header, optional leading
id column; ids default to 1..m). All probabilities are printed with 12
significant digits, every run is deterministic given --seed, and errors
exit nonzero with a single machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys

# argparse only treats plain negative numbers as values, not "-inf"; widen
# the matcher so `--r -inf` parses (none of our flags look like numbers)
_NEG_VALUE = re.compile(r"^-(\d+\.?\d*|\.\d+|inf(inity)?)$", re.IGNORECASE)

import numpy as np

from . import experiments
from .calibration import (
    CalibrationTable,
    LocalTestSpec,
    empirical_calibration,
    vovk_alpha_factor,
    gauss_asymptotic_threshold,
)
from .closure import (
    adjusted_p_closed,
    adjusted_p_local,
    coma as coma_op,
    fdp_bound,
    largest_fdp_set,
    largest_fwer_set,
)
from .errors import MeanClosureError
from .scores import build_score_set, generalized_mean, make_subset

_BACKENDS = {"arbitrary": "ArbitraryDep", "gauss": "GaussAsymptotic",
             "empirical": "EmpiricalTable"}


class CliError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def read_pvalues(path):
    """Read (ids, pvalues) from a CSV file: one value per row, optional
    header row and optional leading id column."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}")
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise CliError(f"{path}: no data rows")
    start = 0
    if not _is_number(rows[0][-1].strip()):
        start = 1
        if len(rows) == 1:
            raise CliError(f"{path}: header only, no data rows")
    ids, ps = [], []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        cells = [c.strip() for c in row]
        if len(cells) == 1:
            idtok, ptok = None, cells[0]
        elif len(cells) == 2:
            idtok, ptok = cells
        else:
            raise CliError(f"{path}:{lineno}: expected 1 or 2 columns, "
                           f"got {len(cells)}")
        if not _is_number(ptok):
            raise CliError(f"{path}:{lineno}: not a number: {ptok!r}")
        ps.append(float(ptok))
        ids.append(idtok)
    if any(i is None for i in ids):
        if not all(i is None for i in ids):
            raise CliError(f"{path}: mixed rows with and without id column")
        ids = [str(i) for i in range(1, len(ps) + 1)]
    return ids, np.array(ps, dtype=np.float64)


def parse_set(setspec: str, ids, pvalues) -> np.ndarray:
    """Resolve --set into 0-based indices: 'all', 'top-K' (the K smallest
    p-values), or a comma-separated id list."""
    m = len(ids)
    if setspec == "all":
        return np.arange(m, dtype=np.int64)
    if setspec.startswith("top-"):
        try:
            k = int(setspec[4:])
        except ValueError:
            raise CliError(f"bad --set value {setspec!r}")
        if not (1 <= k <= m):
            raise CliError(f"--set top-{k} out of range 1..{m}")
        return np.sort(np.argsort(pvalues, kind="stable")[:k]).astype(np.int64)
    id_pos = {v: i for i, v in enumerate(ids)}
    out = []
    for tok in setspec.split(","):
        tok = tok.strip()
        if tok not in id_pos:
            raise CliError(f"unknown id {tok!r} in --set")
        out.append(id_pos[tok])
    if not out:
        raise CliError("--set resolved to an empty set")
    return np.unique(np.array(out, dtype=np.int64))


def build_spec(args) -> LocalTestSpec:
    backend = _BACKENDS[args.backend]
    table = None
    if backend == "EmpiricalTable":
        if not getattr(args, "table", None):
            raise CliError("--backend empirical requires --table")
        table = CalibrationTable.load(args.table)
    return LocalTestSpec(r=args.r, backend=backend, table=table)


def _emit(args, payload_rows, columns, summary=None):
    """Write either CSV rows or a JSON document to --out / stdout."""
    if args.format == "json":
        doc = {"columns": columns,
               "rows": payload_rows}
        if summary is not None:
            doc["summary"] = summary
        text = json.dumps(doc, indent=2, default=_fmt) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in payload_rows:
            w.writerow([_fmt(x) for x in row])
        text = buf.getvalue()
        if summary is not None:
            for k, v in summary.items():
                text += f"# {k}={_fmt(v)}\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _parse_r(tok: str) -> float:
    low = tok.lower()
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    if low in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def cmd_combine(args):
    ids, p = read_pvalues(args.input)
    m_r = generalized_mean(args.r, np.maximum(p, np.finfo(float).tiny))
    m = len(p)
    if args.backend == "gauss":
        crit = gauss_asymptotic_threshold(args.r, m, args.alpha)
    elif args.backend == "empirical":
        spec = build_spec(args)
        crit = spec.table.lookup(m)
        if not math.isclose(args.alpha, spec.table.alpha, abs_tol=1e-12):
            raise CliError(f"table calibrated at alpha={spec.table.alpha}")
    else:
        crit = args.alpha / vovk_alpha_factor(args.r, m)
    reject = m_r <= crit
    _emit(args, [[_fmt(m_r), _fmt(crit), "reject" if reject else "accept"]],
          ["statistic", "critical_value", "decision"],
          {"r": args.r, "alpha": args.alpha, "m": m,
           "backend": _BACKENDS[args.backend]})
    return 0


def cmd_calibrate(args):
    table = empirical_calibration(r=args.r, alpha=args.alpha,
                                  max_m=args.max_m, n_trials=args.n_trials,
                                  seed=args.seed)
    table.save(args.out)
    sys.stdout.write(f"wrote {args.out} (sizes 1..{table.max_size()}, "
                     f"alpha={_fmt(table.alpha)}, r={_fmt(table.r)})\n")
    return 0


def _load_query(args):
    ids, p = read_pvalues(args.input)
    ss = build_score_set(p)
    idx = parse_set(args.set, ids, p)
    return ids, ss, make_subset(ss, idx)


def cmd_adjust(args):
    ids, ss, q = _load_query(args)
    spec = build_spec(args)
    p_loc = adjusted_p_local(ss, spec, q)
    p_cls = adjusted_p_closed(ss, spec, q)
    _emit(args, [[_fmt(p_loc), _fmt(p_cls)]],
          ["p_local", "p_closed"],
          {"r": args.r, "set_size": q.size, "m": ss.m})
    return 0


def cmd_coma(args):
    ids, ss, q = _load_query(args)
    spec = build_spec(args)
    value = coma_op(ss, spec, q)
    _emit(args, [[_fmt(value)]], ["coma"],
          {"r": args.r, "set_size": q.size, "m": ss.m})
    return 0


def cmd_bound(args):
    ids, ss, q = _load_query(args)
    spec = build_spec(args)
    e_bar = fdp_bound(ss, spec, q, args.alpha)
    _emit(args, [[e_bar, q.size - e_bar]],
          ["fdp_bound", "true_discoveries_lb"],
          {"r": args.r, "alpha": args.alpha, "set_size": q.size, "m": ss.m})
    return 0


def cmd_select(args):
    ids, p = read_pvalues(args.input)
    ss = build_score_set(p)
    spec = build_spec(args)
    if args.fwer or args.gamma == 0.0:
        res = largest_fwer_set(ss, spec, args.alpha)
        guarantee = f"FWER <= {_fmt(args.alpha)}"
    else:
        res = largest_fdp_set(ss, spec, args.alpha, args.gamma)
        guarantee = (f"FDP <= {_fmt(args.gamma)} with prob >= "
                     f"{_fmt(1.0 - args.alpha)}")
    selected_ids = [ids[i] for i in res.selected]
    _emit(args, [[",".join(selected_ids), res.size, guarantee]],
          ["selected", "size", "guarantee"],
          {"r": args.r, "alpha": args.alpha, "m": ss.m})
    return 0


def cmd_simulate(args):
    table = None
    if args.backend == "empirical":
        if not args.table:
            raise CliError("--backend empirical requires --table")
        table = CalibrationTable.load(args.table)
    backend = _BACKENDS[args.backend]
    exp = args.experiment
    if exp == "type1-curve":
        cols, rows, summary = experiments.type1_curve(
            args.m, args.r, args.alpha, args.n_trials, args.seed)
    elif exp == "power-curve":
        cols, rows, summary = experiments.power_curve(
            args.m, args.r, args.alpha, args.mu, args.pi,
            args.n_trials, args.seed)
    elif exp == "coma-curve":
        cols, rows, summary = experiments.coma_curve(
            args.m, args.r, backend, args.rho, args.n_trials, args.seed,
            table=table)
    elif exp == "fwer-exp":
        cols, rows, summary = experiments.fwer_experiment(
            args.m, args.rho, args.mu, args.pi, args.r, backend,
            args.alpha, args.n_trials, args.seed, table=table)
    else:  # fdp-exp
        cols, rows, summary = experiments.fdp_experiment(
            args.m, args.rho, args.mu, args.pi, args.r, backend,
            args.alpha, args.gamma, args.n_trials, args.seed, table=table)
    _emit(args, rows, cols, summary)
    if args.figure:
        from .report import render_figure
        render_figure(exp, cols, rows, summary, args.figure)
    return 0


def _add_common_io(sp, needs_input=True):
    if needs_input:
        sp.add_argument("--input", required=True, help="CSV of p-values")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out", default=None, help="output path (default stdout)")


def _add_test_flags(sp, with_alpha=True):
    sp.add_argument("--r", type=_parse_r, required=True,
                    help="generalized-mean exponent (inf/-inf allowed)")
    sp.add_argument("--backend", choices=tuple(_BACKENDS), default="arbitrary")
    sp.add_argument("--table", default=None,
                    help="calibration table JSON (empirical backend)")
    if with_alpha:
        sp.add_argument("--alpha", type=float, default=0.05)


class _SubParser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self._negative_number_matcher = _NEG_VALUE


def make_parser() -> argparse.ArgumentParser:
    default_seed = int(os.environ.get("MEANCLOSURE_SEED", "0"))
    ap = argparse.ArgumentParser(
        prog="meanclosure",
        description="Post-hoc multiple-testing inference via closed testing "
                    "with generalized-mean combination tests.")
    ap._negative_number_matcher = _NEG_VALUE
    sub = ap.add_subparsers(dest="command", required=True,
                            parser_class=_SubParser)

    sp = sub.add_parser("combine", help="combine p-values with M_r and test "
                                        "the global null")
    _add_common_io(sp)
    _add_test_flags(sp)
    sp.set_defaults(func=cmd_combine)

    sp = sub.add_parser("calibrate", help="build an empirical calibration "
                                          "table (JSON)")
    sp.add_argument("--r", type=_parse_r, required=True)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--max-m", type=int, required=True, dest="max_m")
    sp.add_argument("--n-trials", type=int, default=20000, dest="n_trials")
    sp.add_argument("--seed", type=int, default=default_seed)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_calibrate)

    for name, fn, helptext in (
            ("adjust", cmd_adjust, "adjusted local and closed p-values"),
            ("coma", cmd_coma, "cost of multiplicity adjustment"),
            ("bound", cmd_bound, "false-discovery bound for a set")):
        sp = sub.add_parser(name, help=helptext)
        _add_common_io(sp)
        _add_test_flags(sp, with_alpha=(name == "bound"))
        sp.add_argument("--set", required=True,
                        help="comma-separated ids, top-K, or all")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("select", help="largest rejection set with FWER or "
                                       "FDP guarantee")
    _add_common_io(sp)
    _add_test_flags(sp)
    sp.add_argument("--gamma", type=float, default=0.0)
    sp.add_argument("--fwer", action="store_true",
                    help="force the zero-FDP (FWER) selection")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("simulate", help="run a named simulation experiment")
    sp.add_argument("--experiment", required=True,
                    choices=("type1-curve", "power-curve", "coma-curve",
                             "fdp-exp", "fwer-exp"))
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--rho", type=float, default=0.0)
    sp.add_argument("--mu", type=_parse_r, default=0.0)
    sp.add_argument("--pi", type=float, default=0.0)
    sp.add_argument("--gamma", type=float, default=0.1)
    sp.add_argument("--n-trials", type=int, default=1000, dest="n_trials")
    sp.add_argument("--seed", type=int, default=default_seed)
    sp.add_argument("--figure", default=None,
                    help="also render the output as a figure at this path")
    _add_test_flags(sp)
    _add_common_io(sp, needs_input=False)
    sp.set_defaults(func=cmd_simulate)

    return ap


def main(argv=None) -> int:
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, MeanClosureError, ValueError) as e:
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
