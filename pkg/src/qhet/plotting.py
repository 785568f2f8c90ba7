"""Figures from a simulation results CSV.

Each figure covers one (delta, f, size regime) slice and holds a grid of
panels, rows indexed by study size and columns by K. Output is SVG written
by matplotlib with the hash salt and date pinned, so equal CSVs give equal
bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .sim import ALT_TESTS, ESTIMATORS, INTERVALS, NULL_TESTS  # noqa: E402

KINDS = ("bias", "coverage", "level", "level_d", "power", "apxerr")

_RC = {
    "svg.hashsalt": "qhet",
    "svg.fonttype": "none",
    "font.size": 7,
    "axes.titlesize": 7,
    "lines.linewidth": 1.0,
    "lines.markersize": 3,
}


class SliceError(LookupError):
    """The requested slice is not in the results; ``available`` lists what is."""

    def __init__(self, message, available):
        super().__init__(message)
        self.available = available


@dataclass(frozen=True, order=True)
class Slice:
    delta: float
    f: float
    regime: str          # "equal" or "unequal"

    @property
    def label(self) -> str:
        return f"delta={self.delta:g}, f={self.f:g}, {self.regime} n"

    @property
    def stem(self) -> str:
        return f"delta{self.delta:g}_f{self.f:g}_{self.regime}"


def _regime(n_spec: str) -> str:
    return "unequal" if ";" in n_spec else "equal"


def _n_sort_key(n_spec: str) -> float:
    return float(np.mean([float(x) for x in n_spec.split(";")]))


def _n_label(n_spec: str) -> str:
    if ";" not in n_spec:
        return f"n={n_spec}"
    return f"n-bar={_n_sort_key(n_spec):g}"


def prepare(df: pd.DataFrame) -> pd.DataFrame:
    df = df.copy()
    df["n_spec"] = df["n_spec"].astype(str)
    df["regime"] = df["n_spec"].map(_regime)
    return df


def available_slices(df: pd.DataFrame) -> list:
    keys = df[["delta", "f", "regime"]].drop_duplicates()
    return sorted(Slice(float(d), float(f), r) for d, f, r in keys.itertuples(index=False))


def _select(df, sl: Slice):
    return df[np.isclose(df["delta"], sl.delta) & np.isclose(df["f"], sl.f)
              & (df["regime"] == sl.regime)]


def _metric_spec(kind: str, alpha: float, p_tau2: float):
    """``(metric name, methods, x column, reference line)`` for a figure kind."""
    if kind == "bias":
        return "bias", ESTIMATORS, "tau2", 0.0
    if kind == "coverage":
        return "coverage", INTERVALS, "tau2", None
    if kind in ("level", "power"):
        return f"reject@{alpha:g}", NULL_TESTS, "n" if kind == "level" else "tau2", alpha
    if kind == "level_d":
        return f"level_d@{alpha:g}", ALT_TESTS, "tau2", alpha
    if kind == "apxerr":
        return "apxerr", tuple(dict.fromkeys(ALT_TESTS + NULL_TESTS)), "p", 0.0
    raise ValueError(f"unknown plot kind {kind!r}")


def panel_series(df: pd.DataFrame, kind: str, alpha: float = 0.05, p_tau2: float = 0.0):
    """Data behind one figure: ``{(row, col): {method: (x, y)}}`` plus axis labels.

    Rows are study sizes and columns are K, except for ``level`` figures
    (x is the size, so there is a single row).
    """
    metric, methods, xcol, _ = _metric_spec(kind, alpha, p_tau2)
    if kind == "apxerr":
        d = df[df["metric"].str.startswith("apxerr@") & np.isclose(df["tau2"], p_tau2)].copy()
        d["p"] = d["metric"].str.slice(len("apxerr@")).astype(float)
    else:
        d = df[df["metric"] == metric].copy()
        if kind == "level":
            d = d[d["tau2"] == 0.0]
            d["n"] = d["n_spec"].map(_n_sort_key)
        elif kind == "level_d":
            d = d[d["tau2"] > 0.0]
    d = d[d["method"].isin(methods)]
    panels = {}
    if kind == "level":
        groups = d.groupby(["K"], sort=True)
        keys = [("all", int(K[0])) for K, _ in groups]
        group_iter = zip(keys, (g for _, g in groups))
    else:
        order = sorted(d["n_spec"].unique(), key=_n_sort_key)
        group_iter = []
        for n in order:
            for K in sorted(d["K"].unique()):
                group_iter.append(((n, int(K)), d[(d["n_spec"] == n) & (d["K"] == K)]))
    for key, g in group_iter:
        if g.empty:
            continue
        series = {}
        for method in methods:
            gm = g[g["method"] == method].sort_values(xcol)
            if not gm.empty:
                series[method] = (gm[xcol].to_numpy(float), gm["value"].to_numpy(float))
        panels[key] = series
    return panels


_YLABEL = {"bias": "bias", "coverage": "coverage", "level": "level", "level_d": "level",
           "power": "power", "apxerr": "error"}
_XLABEL = {"tau2": "tau^2", "n": "n", "p": "p"}


def render(panels: dict, kind: str, title: str, path, alpha: float = 0.05) -> Path:
    """Draw ``panels`` (as from :func:`panel_series`) to an SVG file."""
    _, methods, xcol, ref = _metric_spec(kind, alpha, 0.0)
    rows = list(dict.fromkeys(k[0] for k in panels))
    cols = sorted({k[1] for k in panels})
    path = Path(path)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(len(rows), len(cols), squeeze=False, sharex=True,
                                 figsize=(2.2 * len(cols) + 0.6, 1.6 * len(rows) + 0.8))
        for i, r in enumerate(rows):
            for j, K in enumerate(cols):
                ax = axes[i, j]
                series = panels.get((r, K))
                if not series:
                    ax.set_axis_off()
                    continue
                for method, (x, y) in series.items():
                    ax.plot(x, y, marker="o", label=method)
                if ref is not None:
                    ax.axhline(ref, color="0.6", linestyle=":", linewidth=0.8)
                if kind == "coverage":
                    ax.axhline(0.95, color="0.6", linestyle=":", linewidth=0.8)
                if kind == "apxerr":
                    ax.set_xscale("logit")
                name = f"K={K}" if r == "all" else f"{_n_label(r)}, K={K}"
                ax.set_title(name)
                if i == len(rows) - 1:
                    ax.set_xlabel(_XLABEL[xcol])
                if j == 0:
                    ax.set_ylabel(_YLABEL[kind])
        handles, labels = {}, []
        for ax in axes.flat:
            for h, lab in zip(*ax.get_legend_handles_labels()):
                if lab not in handles:
                    handles[lab] = h
                    labels.append(lab)
        ncol = min(len(labels), 4)
        nrow = -(-len(labels) // ncol) if labels else 1
        height = fig.get_figheight()
        fig.legend([handles[lab] for lab in labels], labels, loc="lower center", ncol=ncol,
                   frameon=False)
        fig.suptitle(title, x=0.02, ha="left")
        fig.tight_layout(rect=(0, 0.18 * nrow / height, 1, 1 - 0.3 / height))
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def plot_results(csv_path, out_dir, kinds=KINDS, slices=None, alpha: float = 0.05,
                 apx_tau2: float = 0.0) -> list:
    """Write one SVG per (kind, slice); returns the paths written.

    Raises :class:`SliceError` when a requested slice is not in the CSV.
    """
    df = prepare(pd.read_csv(csv_path, dtype={"n_spec": str, "method": str, "metric": str}))
    avail = available_slices(df)
    if slices is None:
        slices = avail
    missing = [s for s in slices if not any(
        np.isclose(s.delta, a.delta) and np.isclose(s.f, a.f) and s.regime == a.regime
        for a in avail)]
    if missing:
        raise SliceError(f"slice not in results: {', '.join(s.label for s in missing)}", avail)
    written = []
    for kind in kinds:
        for sl in slices:
            panels = panel_series(_select(df, sl), kind, alpha, apx_tau2)
            if not panels:
                continue
            title = f"{kind}: {sl.label}"
            if kind == "apxerr":
                title += f", tau^2={apx_tau2:g}"
            written.append(render(panels, kind, title, Path(out_dir) / f"{kind}_{sl.stem}.svg",
                                  alpha))
    return written
