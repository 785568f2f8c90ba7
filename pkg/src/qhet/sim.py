"""Monte Carlo study of tau^2 estimators, intervals and heterogeneity tests.

A cell is one combination of (K, study sizes, f, delta, tau^2). Each
replicate draws delta_i ~ N(delta, tau^2), draws g_i from its scaled
noncentral t law, and runs every estimator, interval and test on the result.
Cells are independent; each gets its own seed derived from the master seed
and the cell's parameters, so results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy import stats

from ._special import chdtr
from .errors import QhetError
from .estimators import (
    REML_MAXITER,
    REML_TOL,
    _dl,
    _median,
    _qgen_solve,
    _reml,
    _ssc,
    _ssu,
    _tau2_max,
)
from .intervals import _chi2_ppf, _fp_interval, _pl_interval, _qgen_interval
from .qstat import _q
from .quadform import (
    DEFAULT_EPS,
    _ess_cumulants,
    _ess_variances,
    _kdb_df,
    _kdb_inputs,
    _q_gamma_cdf,
    _q_mixture_cdf,
    _weighted_mean,
)
from .smd import _var_cond, _var_uncond, sample_g

log = logging.getLogger(__name__)

ESTIMATORS = ("SSC", "SSU", "SMC", "SMU", "DL", "REML", "MP", "KDB")
INTERVALS = ("QP", "PL", "KDB", "FPC", "FPU")
NULL_TESTS = ("F SW", "M2 SW", "chi2", "KDB")
ALT_TESTS = ("F SW", "M2 SW", "BJ")

# method groups that can be switched off to save time
GROUPS = ("median", "fp", "kdb", "pl", "alt")
GROUP_MEMBERS = {"median": {"SMC", "SMU"}, "fp": {"FPC", "FPU"}, "kdb": {"KDB"},
                 "pl": {"PL"}, "alt": {"F SW", "M2 SW", "BJ"}}
ALL_METHODS = tuple(dict.fromkeys(ESTIMATORS + INTERVALS + NULL_TESTS + ALT_TESTS))
# rows that are always written
BOOKKEEPING = ("Q_F", "Q_IV", "cell")

DEFAULT_P_GRID = (.001, .0025, .005, .01, .025, .05, .1, .25, .5, .75, .9, .95, .975, .99,
                 .995, .9975, .999)
DEFAULT_ALPHAS = (.001, .005, .01, .05)
UNEQUAL_SIZES = ((12, 16, 18, 20, 84), (24, 32, 36, 40, 168), (64, 72, 76, 80, 208),
                  (124, 132, 136, 140, 268))

CSV_COLUMNS = ("K", "n_spec", "f", "delta", "tau2", "method", "metric", "value", "reps", "seed")


class ConfigError(QhetError, ValueError):
    """A simulation config field is invalid; ``field`` names it."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# grid description


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class Cell:
    K: int
    n_spec: tuple          # (n,) for equal sizes, else the 5 unequal sizes
    f: float
    delta: float
    tau2: float

    @property
    def equal(self) -> bool:
        return len(self.n_spec) == 1

    @property
    def n_label(self) -> str:
        return ";".join(str(n) for n in self.n_spec)

    @property
    def n_bar(self) -> float:
        return float(np.mean(self.n_spec))

    @property
    def key(self) -> tuple:
        return (self.K, self.n_label, _fmt(self.f), _fmt(self.delta), _fmt(self.tau2))

    def sizes(self) -> np.ndarray:
        """Total study sizes, recycling an unequal pattern to length K."""
        if self.equal:
            return np.full(self.K, float(self.n_spec[0]))
        reps, rem = divmod(self.K, len(self.n_spec))
        if rem:
            raise ConfigError("n_spec", f"K={self.K} is not a multiple of {len(self.n_spec)}")
        return np.tile(np.asarray(self.n_spec, dtype=float), reps)

    def design(self):
        """Per-study effective sample size and degrees of freedom."""
        n = self.sizes()
        return n * self.f * (1 - self.f), n - 2.0


def cell_seed(master_seed: int, cell: Cell) -> int:
    """Stable 63-bit seed from the master seed and the cell parameters."""
    text = "|".join(str(x) for x in (master_seed,) + cell.key)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big") >> 1


@dataclass
class SimConfig:
    K: list = field(default_factory=lambda: [5, 10, 30])
    n_spec: list = field(default_factory=lambda: (
        [20, 30, 40, 50, 60, 70, 100, 250, 640, 1000] + [list(u) for u in UNEQUAL_SIZES]))
    f: list = field(default_factory=lambda: [0.5, 0.75])
    delta: list = field(default_factory=lambda: [0.0, 0.2, 0.5, 1.0, 2.0])
    tau2: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5])
    reps: int = 2000
    master_seed: int = 20240601
    alpha_grid: list = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    p_grid: list = field(default_factory=lambda: list(DEFAULT_P_GRID))
    level: float = 0.95
    test_mode: str = "unconditional"
    skip: list = field(default_factory=list)
    methods: Optional[list] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        def positive_ints(name, values, low):
            if not values or any(not isinstance(v, int) or isinstance(v, bool) or v < low
                                 for v in values):
                raise ConfigError(name, f"expected a nonempty list of integers >= {low}")

        positive_ints("K", self.K, 2)
        if not self.n_spec:
            raise ConfigError("n_spec", "expected a nonempty list")
        for spec in self.n_spec:
            sizes = spec if isinstance(spec, (list, tuple)) else [spec]
            positive_ints("n_spec", list(sizes), 6)
            if isinstance(spec, (list, tuple)) and len(spec) != 5:
                raise ConfigError("n_spec", "unequal size vectors must have length 5")
            if isinstance(spec, (list, tuple)) and any(k % 5 for k in self.K):
                raise ConfigError("n_spec", "unequal sizes need every K to be a multiple of 5")
        for name in ("f", "delta", "tau2", "alpha_grid", "p_grid"):
            vals = getattr(self, name)
            if not vals or any(not isinstance(v, (int, float)) or isinstance(v, bool)
                               for v in vals):
                raise ConfigError(name, "expected a nonempty list of numbers")
        if any(not 0 < v < 1 for v in self.f):
            raise ConfigError("f", "control fractions must lie in (0, 1)")
        if any(v < 0 for v in self.tau2):
            raise ConfigError("tau2", "must be nonnegative")
        if any(not 0 < v < 1 for v in self.alpha_grid):
            raise ConfigError("alpha_grid", "must lie in (0, 1)")
        if any(not 0 < v < 1 for v in self.p_grid):
            raise ConfigError("p_grid", "must lie in (0, 1)")
        if not isinstance(self.reps, int) or self.reps < 100:
            raise ConfigError("reps", "must be an integer >= 100")
        if not isinstance(self.master_seed, int):
            raise ConfigError("master_seed", "must be an integer")
        if not 0.5 < self.level < 1:
            raise ConfigError("level", "must lie in (0.5, 1)")
        if self.test_mode not in ("conditional", "unconditional"):
            raise ConfigError("test_mode", "must be 'conditional' or 'unconditional'")
        if any(s not in GROUPS for s in self.skip):
            raise ConfigError("skip", f"entries must be among {GROUPS}")
        if self.methods is not None:
            if not self.methods or any(m not in ALL_METHODS for m in self.methods):
                raise ConfigError("methods", f"entries must be among {ALL_METHODS}")

    def effective_skip(self) -> list:
        """Method groups switched off, explicitly or because no selected method needs them."""
        skip = set(self.skip)
        if self.methods is not None:
            wanted = set(self.methods)
            for grp, members in GROUP_MEMBERS.items():
                if not wanted & members:
                    skip.add(grp)
        return [g for g in GROUPS if g in skip]

    def fingerprint(self) -> str:
        """Digest of every setting that affects a cell's rows (not the grid axes)."""
        keep = {k: v for k, v in self.to_dict().items()
                if k not in ("K", "n_spec", "f", "delta", "tau2")}
        text = json.dumps(keep, sort_keys=True)
        return hashlib.blake2b(text.encode(), digest_size=6).hexdigest()

    def cells(self) -> list:
        """Cells in canonical order: equal sizes first, then unequal."""
        equal = [s for s in self.n_spec if not isinstance(s, (list, tuple))]
        unequal = [tuple(s) for s in self.n_spec if isinstance(s, (list, tuple))]
        out = []
        for specs in ([(n,) for n in equal], unequal):
            for K, spec, f, d, t in itertools.product(self.K, specs, self.f, self.delta,
                                                      self.tau2):
                out.append(Cell(K, tuple(spec), float(f), float(d), float(t)))
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown config field")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# per-replicate kernel


@njit(cache=True)
def _rep(g, ntilde, m, tau2_true, groups, alpha, qp_hi, qp_lo, pl_crit,
         z, zw, vn, vw, vidx, eps, test_uncond,
         est, trunc, fail, lo, hi, cap, pnull, palt, qstats, r):
    k = g.size
    v2 = np.empty(k)
    for i in range(k):
        v2[i] = _var_cond(g[i], ntilde[i], m[i])
    w_iv = 1.0 / v2
    tmax = _tau2_max(g)
    qf = _q(g, ntilde)[0]
    qiv = _q(g, w_iv)[0]
    qstats[r, 0] = qf
    qstats[r, 1] = qiv
    fallbacks = 0

    val, tr = _ssc(g, v2, ntilde)
    est[r, 0] = val
    trunc[r, 0] = tr
    val, tr = _ssu(g, v2, ntilde, m)
    est[r, 1] = val
    trunc[r, 1] = tr
    if groups[0]:
        for j in range(2):
            val, tr, _, _ = _median(g, v2, ntilde, m, j == 1, eps)
            est[r, 2 + j] = val
            trunc[r, 2 + j] = tr
    val, tr = _dl(g, v2)
    est[r, 4] = val
    trunc[r, 4] = tr
    val, _, ok = _reml(g, v2, REML_TOL, REML_MAXITER)
    est[r, 5] = val
    trunc[r, 5] = val == 0.0
    fail[r, 5] = not ok
    val, code, _ = _qgen_solve(g, v2, k - 1.0, tmax)
    est[r, 6] = val
    trunc[r, 6] = code != 0

    # intervals
    a, b, ca, cb = _qgen_interval(g, v2, qp_hi, qp_lo)
    lo[r, 0], hi[r, 0], cap[r, 0] = a, b, cb == 1
    if groups[3]:
        a, b, ca, cb = _pl_interval(g, v2, pl_crit)
        lo[r, 1], hi[r, 1], cap[r, 1] = a, b, cb == 1
    if groups[2]:
        df = _kdb_df(g, v2, ntilde, m, z, zw, vn, vw, vidx)
        if df > 0.0:
            val, code, _ = _qgen_solve(g, v2, df, tmax)
            est[r, 7] = val
            trunc[r, 7] = code != 0
            a, b, ca, cb = _qgen_interval(g, v2, _chi2_ppf(df, 1.0 - 0.5 * alpha),
                                          _chi2_ppf(df, 0.5 * alpha))
            lo[r, 2], hi[r, 2], cap[r, 2] = a, b, cb == 1
            pnull[r, 3] = 1.0 - chdtr(df, qiv) if qiv > 0.0 else 1.0
        else:
            fail[r, 7] = True
    if groups[1]:
        for j in range(2):
            a, b, ca, cb = _fp_interval(g, v2, ntilde, m, j == 1, alpha, eps)
            lo[r, 3 + j], hi[r, 3 + j], cap[r, 3 + j] = a, b, cb == 1

    # tests of tau^2 = 0
    dhat = _weighted_mean(g, ntilde)
    s = _ess_variances(g, v2, ntilde, m, 0.0, test_uncond, dhat)
    cdf, st = _q_mixture_cdf(ntilde, s, qf, eps)
    fallbacks += st
    pnull[r, 0] = 1.0 - cdf
    k4 = _ess_cumulants(ntilde, m, 0.0, dhat)
    pnull[r, 1] = 1.0 - _q_gamma_cdf(ntilde, s, k4, qf)
    pnull[r, 2] = 1.0 - chdtr(k - 1.0, qiv) if qiv > 0.0 else 1.0

    # tests of tau^2 <= tau0^2 at tau0^2 = the true tau^2
    if tau2_true == 0.0:
        palt[r, 0] = pnull[r, 0]
        palt[r, 1] = pnull[r, 1]
        palt[r, 2] = pnull[r, 2]
    elif groups[4]:
        s = _ess_variances(g, v2, ntilde, m, tau2_true, test_uncond, dhat)
        cdf, st = _q_mixture_cdf(ntilde, s, qf, eps)
        fallbacks += st
        palt[r, 0] = 1.0 - cdf
        k4 = _ess_cumulants(ntilde, m, tau2_true, dhat)
        palt[r, 1] = 1.0 - _q_gamma_cdf(ntilde, s, k4, qf)
        cdf, st = _q_mixture_cdf(w_iv, v2 + tau2_true, qiv, eps)
        fallbacks += st
        palt[r, 2] = 1.0 - cdf
    return fallbacks


@njit(cache=True)
def _run_reps(gs, ntilde, m, tau2_true, groups, alpha, qp_hi, qp_lo, pl_crit,
              z, zw, vn, vw, vidx, eps, test_uncond,
              est, trunc, fail, lo, hi, cap, pnull, palt, qstats):
    fallbacks = 0
    for r in range(gs.shape[0]):
        fallbacks += _rep(gs[r], ntilde, m, tau2_true, groups, alpha, qp_hi, qp_lo, pl_crit,
                          z, zw, vn, vw, vidx, eps, test_uncond,
                          est, trunc, fail, lo, hi, cap, pnull, palt, qstats, r)
    return fallbacks


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class CellResult:
    cell: Cell
    reps: int
    seed: int
    metrics: dict            # (method, metric) -> value, in insertion order

    def rows(self) -> list:
        c = self.cell
        return [(c.K, c.n_label, _fmt(c.f), _fmt(c.delta), _fmt(c.tau2), method, metric,
                 _fmt(value), self.reps, self.seed)
                for (method, metric), value in self.metrics.items()]

    def get(self, method: str, metric: str) -> float:
        return self.metrics[(method, metric)]


def approximation_error(q_samples, cdf: Callable, p_grid=DEFAULT_P_GRID) -> np.ndarray:
    """``P(F(Q) > 1 - p) - p`` over the p grid for the approximating CDF ``cdf``."""
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any((p_grid <= 0) | (p_grid >= 1)):
        raise ValueError("p_grid must lie strictly inside (0, 1)")
    F = np.array([cdf(q) for q in np.asarray(q_samples, dtype=float)])
    return np.array([np.mean(F > 1 - p) - p for p in p_grid])


def _tail_error(pvals, p_grid):
    # F(Q) > 1 - p  <=>  upper-tail p-value < p
    return [float(np.mean(pvals < p) - p) for p in p_grid]


def expected_qf(cell: Cell) -> float:
    """First moment of Q_F in a cell at the true parameters."""
    ntilde, m = cell.design()
    W = ntilde.sum()
    q = ntilde / W
    ev2 = np.array([_var_uncond(cell.delta, cell.tau2, mi, ni) for mi, ni in zip(m, ntilde)])
    return float(W * np.sum(q * (1 - q) * (ev2 + cell.tau2)))


def run_cell(cell: Cell, reps: int, seed: int, config: Optional[SimConfig] = None) -> CellResult:
    """Simulate one cell; deterministic in ``(cell, reps, seed, config)``."""
    config = config or SimConfig(reps=max(reps, 100))
    ntilde, m = cell.design()
    K = cell.K
    rng = np.random.default_rng(seed)
    delta_i = rng.normal(cell.delta, math.sqrt(cell.tau2), size=(reps, K))
    gs = np.ascontiguousarray(sample_g(rng, m, ntilde, delta_i, size=(reps, K)))

    alpha = 1 - config.level
    skip = config.effective_skip()
    groups = np.array([grp not in skip for grp in GROUPS])
    z, zw, vn, vw, vidx = _kdb_inputs(m)
    nan = np.nan
    est = np.full((reps, 8), nan)
    trunc = np.zeros((reps, 8), dtype=np.bool_)
    fail = np.zeros((reps, 8), dtype=np.bool_)
    lo = np.full((reps, 5), nan)
    hi = np.full((reps, 5), nan)
    cap = np.zeros((reps, 5), dtype=np.bool_)
    pnull = np.full((reps, 4), nan)
    palt = np.full((reps, 3), nan)
    qstats = np.empty((reps, 2))
    fallbacks = _run_reps(
        gs, ntilde, m, cell.tau2, groups, alpha,
        stats.chi2.ppf(1 - alpha / 2, K - 1), stats.chi2.ppf(alpha / 2, K - 1),
        stats.chi2.ppf(1 - alpha, 1), z, zw, vn, vw, vidx, DEFAULT_EPS,
        config.test_mode == "unconditional",
        est, trunc, fail, lo, hi, cap, pnull, palt, qstats)

    metrics = {}
    tau2 = cell.tau2
    for j, name in enumerate(ESTIMATORS):
        col = est[:, j]
        if np.all(np.isnan(col)) and not fail[:, j].any():
            continue
        ok = ~fail[:, j] & ~np.isnan(col)
        vals = col[ok]
        metrics[(name, "mean")] = float(vals.mean()) if vals.size else nan
        metrics[(name, "bias")] = float(vals.mean() - tau2) if vals.size else nan
        metrics[(name, "rmse")] = float(np.sqrt(np.mean((vals - tau2) ** 2))) if vals.size else nan
        metrics[(name, "truncation_rate")] = float(trunc[ok, j].mean()) if vals.size else nan
        metrics[(name, "failure_rate")] = float(1 - ok.mean())
    for j, name in enumerate(INTERVALS):
        if np.all(np.isnan(lo[:, j])):
            continue
        covered = (lo[:, j] <= tau2) & (tau2 <= hi[:, j])
        metrics[(name, "coverage")] = float(covered.mean())
        metrics[(name, "width")] = float(np.mean(hi[:, j] - lo[:, j]))
        metrics[(name, "capped_rate")] = float(cap[:, j].mean())
    for j, name in enumerate(NULL_TESTS):
        if np.all(np.isnan(pnull[:, j])):
            continue
        for a in config.alpha_grid:
            metrics[(name, f"reject@{a:g}")] = float(np.mean(pnull[:, j] < a))
    for j, name in enumerate(ALT_TESTS):
        if np.all(np.isnan(palt[:, j])):
            continue
        for a in config.alpha_grid:
            metrics[(name, f"level_d@{a:g}")] = float(np.mean(palt[:, j] < a))
    # approximation error of each CDF at the true tau^2
    apx = [(name, palt[:, j]) for j, name in enumerate(ALT_TESTS)]
    if tau2 == 0.0:
        apx = apx[:2] + [(name, pnull[:, j]) for j, name in enumerate(NULL_TESTS) if j >= 2]
    for name, pv in apx:
        if np.all(np.isnan(pv)):
            continue
        for p, err in zip(config.p_grid, _tail_error(pv, config.p_grid)):
            metrics[(name, f"apxerr@{p:g}")] = err
    for j, name in enumerate(("Q_F", "Q_IV")):
        metrics[(name, "mean")] = float(qstats[:, j].mean())
        metrics[(name, "se")] = float(qstats[:, j].std(ddof=1) / math.sqrt(reps))
    metrics[("Q_F", "expected")] = expected_qf(cell)
    metrics[("cell", "failure_rate")] = float(fail.any(axis=1).mean())
    metrics[("cell", "fallback_rate")] = float(fallbacks / reps)
    if config.methods is not None:
        wanted = set(config.methods) | set(BOOKKEEPING)
        metrics = {key: v for key, v in metrics.items() if key[0] in wanted}
    return CellResult(cell, reps, seed, metrics)


# ---------------------------------------------------------------------------
# grid orchestration and persistence


def _task(args):
    cell, reps, seed, config = args
    return run_cell(cell, reps, seed, config)


def _part_name(cell: Cell, fingerprint: str) -> str:
    text = "|".join(map(str, cell.key))
    digest = hashlib.blake2b(text.encode(), digest_size=10).hexdigest()
    return f"cell-{fingerprint}-{digest}.csv"


def _rows_to_text(rows, header=True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def _write_atomic(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def run_grid(config: SimConfig, parallelism: int = 1, out_dir=None, force: bool = False,
             progress: Optional[Callable[[int, int, Cell], None]] = None) -> list:
    """Run every cell of ``config``; output does not depend on ``parallelism``.

    With ``out_dir`` each finished cell is persisted to ``out_dir/cells`` as it
    completes, and cells already present there are reused unless ``force``.
    Part files carry a fingerprint of the non-grid settings, so changing
    reps, seed or methods never reuses stale parts. Returns the per-cell row
    lists in canonical cell order together with the number of cells computed.
    """
    cells = config.cells()
    parts_dir = None
    if out_dir is not None:
        parts_dir = Path(out_dir) / "cells"
        parts_dir.mkdir(parents=True, exist_ok=True)
    rows_by_cell: dict = {}
    todo = []
    fp = config.fingerprint()
    for cell in cells:
        part = parts_dir / _part_name(cell, fp) if parts_dir else None
        if part is not None and part.exists() and not force:
            rows_by_cell[cell] = read_rows(part)
        else:
            todo.append(cell)
    tasks = [(cell, config.reps, cell_seed(config.master_seed, cell), config) for cell in todo]
    done = 0

    def collect(result: CellResult):
        nonlocal done
        rows = [tuple(str(x) for x in row) for row in result.rows()]
        rows_by_cell[result.cell] = rows
        if parts_dir is not None:
            _write_atomic(parts_dir / _part_name(result.cell, fp), _rows_to_text(rows))
        done += 1
        if progress:
            progress(done, len(tasks), result.cell)

    if parallelism <= 1 or len(tasks) <= 1:
        for t in tasks:
            collect(_task(t))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for result in pool.map(_task, tasks, chunksize=1):
                collect(result)
    return [rows_by_cell[c] for c in cells], len(tasks)


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [tuple(row) for row in reader]


def write_results(path, per_cell_rows: Iterable[Sequence]):
    rows = [row for rows in per_cell_rows for row in rows]
    _write_atomic(Path(path), _rows_to_text(rows))


def load_results(path):
    """Results CSV as a pandas DataFrame with numeric columns parsed."""
    import pandas as pd

    df = pd.read_csv(path, dtype={"n_spec": str, "method": str, "metric": str})
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return df


def write_manifest(path, config: SimConfig, wall_time: float, computed: int, total: int,
                   jobs: int):
    from . import __version__

    manifest = {
        "config": config.to_dict(),
        "version": __version__,
        "wall_time_s": round(wall_time, 3),
        "cells_total": total,
        "cells_computed": computed,
        "jobs": jobs,
        "columns": list(CSV_COLUMNS),
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")
