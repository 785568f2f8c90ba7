"""Command-line interface: ``qhet analyze | simulate | plot``.

Exit codes: 0 success, 1 verification mismatch, 2 bad input or config,
3 fewer than two studies, 4 plot slice not in the results.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ConvergenceError, DegenerateStudyError, DomainError, QhetError
from .estimators import Tau2Method, estimate
from .hetero import DEFAULT_TEST_MODE, upper_tail_p
from .intervals import IntervalMethod, interval
from .qstat import WeightScheme, q_weighted
from .quadform import VarianceMode
from .smd import EffectSet, StudySummary, hedges_g

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_FEW, EXIT_SLICE = 0, 1, 2, 3, 4

RAW_COLUMNS = ("study", "n_t", "n_c", "mean_t", "mean_c", "sd_pooled")
PRE_COLUMNS = ("study", "g", "v2", "n_t", "n_c")

NULL_METHODS = ("F SW", "M2 SW", "chi2", "KDB")
TAU0_METHODS = ("F SW", "M2 SW", "BJ")

log = logging.getLogger("qhet")


class InputError(QhetError):
    pass


class TooFewStudies(QhetError):
    pass


# ---------------------------------------------------------------------------
# analyze


def _number(text, column, line, integer=False):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise InputError(f"line {line}: column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise InputError(f"line {line}: column {column!r}: value must be finite")
    if integer:
        if value != int(value):
            raise InputError(f"line {line}: column {column!r}: {text!r} is not an integer")
        return int(value)
    return value


def read_studies(path) -> list:
    """Parse a study CSV into :class:`StudySummary` records.

    Either raw arm summaries (``study,n_t,n_c,mean_t,mean_c,sd_pooled``) or
    precomputed effects (``study,g,v2,n_t,n_c``); extra columns are ignored.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        if "g" in header or "v2" in header:
            needed, raw = PRE_COLUMNS, False
        else:
            needed, raw = RAW_COLUMNS, True
        missing = [c for c in needed if c not in header]
        if missing:
            raise InputError(f"line 1: missing column(s): {', '.join(missing)}")
        idx = {c: header.index(c) for c in needed}
        studies = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            val = {c: row[i].strip() for c, i in idx.items()}
            kw = {"label": val["study"],
                  "n_t": _number(val["n_t"], "n_t", line, integer=True),
                  "n_c": _number(val["n_c"], "n_c", line, integer=True)}
            if raw:
                for c in ("mean_t", "mean_c", "sd_pooled"):
                    kw[c] = _number(val[c], c, line)
            else:
                kw["g"] = _number(val["g"], "g", line)
                kw["v2"] = _number(val["v2"], "v2", line)
            try:
                studies.append(StudySummary(**kw))
            except DomainError as exc:
                raise InputError(f"line {line}: {exc}") from None
    return studies


def _select(methods, universe):
    if methods is None:
        return list(universe)
    return [m for m in universe if m in methods]


def analyze(studies, level=0.95, methods=None, tau0_sq=0.0, mode=DEFAULT_TEST_MODE) -> dict:
    """Every statistic of the report as a JSON-ready dict.

    The input studies are embedded so a report can be recomputed and checked.
    """
    if len(studies) < 2:
        raise TooFewStudies(f"need at least 2 studies, got {len(studies)}")
    estimates = []
    for i, s in enumerate(studies):
        try:
            estimates.append(hedges_g(s))
        except DegenerateStudyError as exc:
            raise InputError(f"line {i + 2}: {exc}") from None
    effects = EffectSet.from_estimates(estimates)
    alpha = 1 - level
    warnings = []
    report = {
        "version": __version__,
        "level": level,
        "tau0_sq": tau0_sq,
        "test_mode": mode.value,
        "methods": None if methods is None else list(methods),
        "input": [{k: v for k, v in vars(s).items() if v is not None} for s in studies],
        "studies": [{"study": e.label, "g": e.g, "v2": e.v2_cond, "n_tilde": e.n_tilde}
                    for e in estimates],
        "Q_IV": q_weighted(effects.g, WeightScheme.INVERSE_VARIANCE.weights(effects)).q,
        "Q_F": q_weighted(effects.g, WeightScheme.EFFECTIVE_SIZE.weights(effects)).q,
    }
    est = {}
    for name in _select(methods, [m.value for m in Tau2Method]):
        try:
            e = estimate(effects, name)
        except ConvergenceError as exc:
            warnings.append(f"{name}: {exc}")
            est[name] = None
            continue
        est[name] = {"value": e.value, "truncated": bool(e.truncated)}
        if e.truncated:
            warnings.append(f"{name}: estimate truncated at {e.value:g}")
    report["estimates"] = est
    ints = {}
    for name in _select(methods, [m.value for m in IntervalMethod]):
        iv = interval(effects, name, alpha)
        ints[name] = {"lower": iv.lower, "upper": iv.upper, "capped": iv.at_upper_bound}
        if iv.at_upper_bound:
            warnings.append(f"{name}: upper limit capped at the search bound {iv.upper:g}")
        if iv.diagnostics.get("degenerate"):
            warnings.append(f"{name}: interval is the single point 0")
    report["intervals"] = ints
    tests = {}
    names = NULL_METHODS if tau0_sq == 0 else TAU0_METHODS
    for name in _select(methods, names):
        q, p = upper_tail_p(effects, name, tau0_sq, mode)
        tests[name] = {"statistic": q, "p_value": p, "reject": bool(p < alpha)}
    report["tests"] = tests
    report["warnings"] = warnings
    return report


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _flatten(v, f"{prefix}/{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}/{i}")
    else:
        yield prefix, obj


def verify(report: dict, tol: float = 1e-12) -> list:
    """Recompute a saved report from its embedded input; returns mismatch descriptions."""
    studies = [StudySummary(**s) for s in report["input"]]
    fresh = analyze(studies, report["level"], report.get("methods"), report["tau0_sq"],
                    VarianceMode(report["test_mode"]))
    old = dict(_flatten(report))
    new = dict(_flatten(fresh))
    bad = []
    for key in sorted(set(old) | set(new)):
        a, b = old.get(key), new.get(key)
        if isinstance(a, float) or isinstance(b, float):
            if a is None or b is None or abs(a - b) > tol * max(1.0, abs(a), abs(b)):
                bad.append(f"{key}: saved {a!r}, recomputed {b!r}")
        elif a != b:
            bad.append(f"{key}: saved {a!r}, recomputed {b!r}")
    return bad


def _fmt(x, width=10):
    if x is None:
        return "-".rjust(width)
    return f"{x:{width}.4f}"


def format_report(r: dict) -> str:
    out = [f"{'study':<16}{'g':>10}{'v2':>10}{'n_tilde':>10}"]
    for s in r["studies"]:
        out.append(f"{s['study'][:16]:<16}{_fmt(s['g'])}{_fmt(s['v2'])}{_fmt(s['n_tilde'])}")
    out.append("")
    out.append(f"Q_IV = {r['Q_IV']:.4f}   Q_F = {r['Q_F']:.4f}")
    if r["estimates"]:
        out.append("")
        out.append("tau^2 estimates")
        for name, e in r["estimates"].items():
            note = "" if e is None or not e["truncated"] else "  (truncated)"
            out.append(f"  {name:<6}{_fmt(None if e is None else e['value'])}{note}")
    if r["intervals"]:
        out.append("")
        out.append(f"{100 * r['level']:g}% intervals for tau^2")
        for name, iv in r["intervals"].items():
            note = "  (capped)" if iv["capped"] else ""
            out.append(f"  {name:<6}[{iv['lower']:.4f}, {iv['upper']:.4f}]{note}")
    if r["tests"]:
        out.append("")
        out.append(f"tests of tau^2 <= {r['tau0_sq']:g} ({r['test_mode']} variances)")
        for name, t in r["tests"].items():
            out.append(f"  {name:<6}Q = {t['statistic']:.4f}   p = {t['p_value']:.4g}")
    if r["warnings"]:
        out.append("")
        out.append("warnings")
        out.extend(f"  {w}" for w in r["warnings"])
    return "\n".join(out)


def _methods_arg(text):
    if text is None:
        return None
    return [m.strip() for m in text.split(",") if m.strip()]


def cmd_analyze(args) -> int:
    if args.verify:
        try:
            report = json.loads(Path(args.verify).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read report {args.verify}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        bad = verify(report)
        if bad:
            print("verification failed:", *bad, sep="\n  ", file=sys.stderr)
            return EXIT_MISMATCH
        print(f"verified {sum(1 for _ in _flatten(report))} fields")
        return EXIT_OK
    if args.input is None:
        print("error: an input CSV is required unless --verify is given", file=sys.stderr)
        return EXIT_INPUT
    if not 0.5 < args.level < 1:
        print("error: --level must lie in (0.5, 1)", file=sys.stderr)
        return EXIT_INPUT
    methods = _methods_arg(args.methods)
    known = {m.value for m in Tau2Method} | {m.value for m in IntervalMethod} | \
        set(NULL_METHODS) | set(TAU0_METHODS)
    if methods is not None and (unknown := [m for m in methods if m not in known]):
        print(f"error: unknown method(s): {', '.join(unknown)}", file=sys.stderr)
        return EXIT_INPUT
    try:
        studies = read_studies(args.input)
        report = analyze(studies, args.level, methods, args.tau0, VarianceMode(args.mode))
    except InputError as exc:
        print(f"error: {args.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TooFewStudies as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FEW
    print(format_report(report))
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    from .sim import ConfigError, SimConfig, run_grid, write_manifest, write_results

    try:
        data = json.loads(Path(args.config).read_text())
    except OSError as exc:
        print(f"error: cannot read config {args.config}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if not isinstance(data, dict):
        print("error: config field <file>: top level must be an object", file=sys.stderr)
        return EXIT_INPUT
    seed = args.seed
    if seed is None and os.environ.get("QHET_SEED"):
        try:
            seed = int(os.environ["QHET_SEED"])
        except ValueError:
            print("error: QHET_SEED must be an integer", file=sys.stderr)
            return EXIT_INPUT
    if seed is not None:
        data["master_seed"] = seed
    if args.reps is not None:
        data["reps"] = args.reps
    if args.level is not None:
        data["level"] = args.level
    if args.methods is not None:
        data["methods"] = _methods_arg(args.methods)
    try:
        config = SimConfig.from_dict(data)
    except ConfigError as exc:
        print(f"error: invalid config field {exc.field!r}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TypeError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(done, total, cell):
        if not args.quiet:
            print(f"[{done}/{total}] K={cell.K} n={cell.n_label} f={cell.f:g} "
                  f"delta={cell.delta:g} tau2={cell.tau2:g}", file=sys.stderr)

    start = time.perf_counter()
    rows, computed = run_grid(config, args.jobs, out, args.force, progress)
    write_results(out / "results.csv", rows)
    write_manifest(out / "manifest.json", config, time.perf_counter() - start, computed,
                   len(rows), args.jobs)
    if not args.quiet:
        print(f"{len(rows)} cells ({computed} computed) -> {out / 'results.csv'}",
              file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot


def cmd_plot(args) -> int:
    from .plotting import KINDS, Slice, SliceError, plot_results

    kinds = _methods_arg(args.kinds) or list(KINDS)
    if bad := [k for k in kinds if k not in KINDS]:
        print(f"error: unknown plot kind(s) {', '.join(bad)}; choose from {', '.join(KINDS)}",
              file=sys.stderr)
        return EXIT_INPUT
    slices = None
    if args.delta is not None or args.f is not None or args.regime is not None:
        if args.delta is None or args.f is None or args.regime is None:
            print("error: a slice needs --delta, --f and --regime together", file=sys.stderr)
            return EXIT_INPUT
        slices = [Slice(args.delta, args.f, args.regime)]
    try:
        paths = plot_results(args.results, args.out, kinds, slices, 1 - args.level,
                             args.apx_tau2)
    except SliceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("available slices:", file=sys.stderr)
        for s in exc.available:
            print(f"  --delta {s.delta:g} --f {s.f:g} --regime {s.regime}", file=sys.stderr)
        return EXIT_SLICE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: cannot read results {args.results}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qhet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="estimate and test heterogeneity for a study CSV")
    a.add_argument("input", nargs="?", help="CSV of studies")
    a.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    a.add_argument("--verify", metavar="REPORT",
                   help="recompute a saved JSON report and compare every number")
    a.add_argument("--level", type=float, default=0.95, help="interval level (default .95)")
    a.add_argument("--methods", help="comma list of estimators, intervals and tests")
    a.add_argument("--tau0", type=float, default=0.0,
                   help="test tau^2 <= TAU0 instead of tau^2 = 0")
    a.add_argument("--mode", choices=("conditional", "unconditional"),
                   default=DEFAULT_TEST_MODE.value, help="variance plug-ins for F SW / M2 SW")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run a simulation grid from a JSON config")
    s.add_argument("config", help="JSON config; omitted fields take the full-grid defaults")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="master seed (falls back to $QHET_SEED)")
    s.add_argument("--reps", type=int, help="replicates per cell")
    s.add_argument("--jobs", type=int, default=1, help="worker processes")
    s.add_argument("--level", type=float, help="interval level")
    s.add_argument("--methods", help="comma list of methods to compute")
    s.add_argument("--force", action="store_true", help="recompute cells already on disk")
    s.add_argument("--quiet", action="store_true", help="no progress output")
    s.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot", help="render SVG figures from a results CSV")
    p.add_argument("results", help="results.csv from simulate")
    p.add_argument("--out", required=True, help="directory for SVG files")
    p.add_argument("--kinds", help="comma list among bias, coverage, level, level_d, power, "
                                   "apxerr (default all)")
    p.add_argument("--delta", type=float, help="slice: mean effect")
    p.add_argument("--f", type=float, help="slice: control-arm fraction")
    p.add_argument("--regime", choices=("equal", "unequal"), help="slice: study-size regime")
    p.add_argument("--level", type=float, default=0.95,
                   help="tests are read at alpha = 1 - level (default .95)")
    p.add_argument("--apx-tau2", type=float, default=0.0,
                   help="tau^2 for approximation-error figures")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except QhetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
