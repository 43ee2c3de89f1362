"""Seed aggregation, deterministic CSV I/O and emitted plot scripts."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class AggregateRow:
    keys: tuple
    mean: float
    ci_halfwidth: Optional[float]
    count: int
    median: float

    @property
    def ci(self):
        if self.ci_halfwidth is None:
            return None
        return (self.mean - self.ci_halfwidth, self.mean + self.ci_halfwidth)


def mean_ci(values: Sequence[float], level: float = 0.95):
    """``(mean, half-width)`` with a Student-t interval; half-width is None below 2 values."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("no values")
    mean = float(np.mean(x))
    if x.size < 2:
        return mean, None
    se = float(np.std(x, ddof=1)) / math.sqrt(x.size)
    return mean, float(stats.t.ppf(0.5 + level / 2.0, x.size - 1) * se)


def aggregate(rows: Iterable[dict], keys: Sequence[str], value: str, groups: Optional[Sequence[tuple]] = None, level: float = 0.95):
    """Mean, CI and median of ``value`` per distinct ``keys`` tuple.

    Groups keep first-appearance order. If ``groups`` is given, exactly those
    groups are reported; missing ones are skipped with a warning.
    """
    buckets: dict = {}
    for r in rows:
        buckets.setdefault(tuple(r[k] for k in keys), []).append(r[value])
    order = list(groups) if groups is not None else list(buckets)
    out = []
    for g in order:
        vals = buckets.get(tuple(g), [])
        if not vals:
            warnings.warn(f"empty group {g!r} excluded from aggregate")
            continue
        mean, half = mean_ci(vals, level)
        out.append(AggregateRow(tuple(g), mean, half, len(vals), float(np.median(vals))))
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def csv_text(rows: Iterable[dict], fields: Sequence[str]) -> str:
    """CSV with ``repr`` floats, so equal numbers always serialize identically."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    return buf.getvalue()


def write_csv(path, rows: Iterable[dict], fields: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(rows, fields))
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_rows(agg: Sequence[AggregateRow], keys: Sequence[str]) -> list[dict]:
    return [
        {**dict(zip(keys, a.keys)), "mean": a.mean, "ci95": a.ci_halfwidth, "median": a.median, "count": a.count}
        for a in agg
    ]


AGG_FIELDS = ["mean", "ci95", "median", "count"]

_PLOT_HEADER = '''"""Generated plot script; reads only the CSVs next to it. Needs pandas and matplotlib."""
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

here = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
'''

PLOT_SCRIPTS = {
    "testfuncs": _PLOT_HEADER
    + '''import numpy as np
from matplotlib.patches import Ellipse

fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, fn in zip(axes, ["quadratic", "styblinski"]):
    for est in ["sf", "reparam", "mvd"]:
        path = here / "traces" / f"{fn}_{est}.csv"
        if not path.exists():
            continue
        df = pd.read_csv(path)
        mean = df.groupby("step")[["mean_0", "mean_1"]].mean()
        line, = ax.plot(mean["mean_0"], mean["mean_1"], label=est)
        for step in mean.index[:: max(1, len(mean) // 10)]:
            pts = df[df.step == step][["mean_0", "mean_1"]].to_numpy()
            if len(pts) < 2:
                continue
            vals, vecs = np.linalg.eigh(np.cov(pts.T))
            angle = np.degrees(np.arctan2(vecs[1, -1], vecs[0, -1]))
            w, h = 2 * np.sqrt(np.maximum(vals[::-1], 0))
            ax.add_patch(Ellipse(pts.mean(axis=0), w, h, angle=angle, fill=False, color=line.get_color(), alpha=0.4))
    ax.set_title(fn)
    ax.legend()
fig.savefig(here / "testfuncs.png", dpi=120)
''',
    "lqr-grad-error": _PLOT_HEADER
    + '''df = pd.read_csv(here / "grad_error.csv")
fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
for i, (n, sub) in enumerate(df.groupby("trajectories")):
    for j, metric in enumerate(["rel_abs_err", "cos_dist"]):
        ax = axes[i, j]
        for est, g in sub.groupby("estimator"):
            s = g.groupby("actions")[metric].agg(["mean", "sem", "count"])
            ax.plot(s.index, s["mean"], label=est)
            ax.fill_between(s.index, s["mean"] - 1.96 * s["sem"], s["mean"] + 1.96 * s["sem"], alpha=0.2)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_title(f"{metric}, {n} trajectories")
        ax.legend()
fig.savefig(here / "grad_error.png", dpi=120)
''',
    "lqr-critic-noise": _PLOT_HEADER
    + '''df = pd.read_csv(here / "critic_noise.csv")
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
styles = ["-", "--", "-.", ":"]
for j, metric in enumerate(["rel_abs_err", "cos_dist"]):
    ax = axes[j]
    for (est, g), color in zip(df.groupby("estimator"), ["C0", "C1", "C2"]):
        for (alpha, h), ls in zip(g.groupby("alpha"), styles):
            s = h.groupby("freq")[metric].mean()
            ax.plot(s.index, s.values, ls, color=color, label=f"{est} a={alpha}")
    ax.set_xscale("log")
    ax.set_title(metric)
axes[0].legend(fontsize=6)
fig.savefig(here / "critic_noise.png", dpi=120)
''',
    "lqr-learning": _PLOT_HEADER
    + '''df = pd.read_csv(here / "learning.csv")
df = df.replace([float("-inf")], float("nan"))
cells = df.groupby(["alpha", "freq"])
fig, axes = plt.subplots(len(cells), 1, figsize=(6, 3 * len(cells)), squeeze=False)
for ax, ((alpha, freq), g) in zip(axes[:, 0], cells):
    for est, h in g.groupby("estimator"):
        s = h.groupby("env_steps")["return"].agg(["mean", "sem"])
        ax.plot(s.index, s["mean"], label=est)
        ax.fill_between(s.index, s["mean"] - 1.96 * s["sem"], s["mean"] + 1.96 * s["sem"], alpha=0.2)
    ax.set_title(f"alpha={alpha}, f={freq}")
    ax.legend()
fig.savefig(here / "learning.png", dpi=120)
''',
    "sac": _PLOT_HEADER
    + '''df = pd.read_csv(here / "sac_eval.csv")
for env, g in df.groupby("env"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for algo, h in g.groupby("algo"):
        s = h.groupby("env_steps")["eval_return"].agg(["mean", "sem"])
        ax.plot(s.index, s["mean"], label=algo)
        ax.fill_between(s.index, s["mean"] - 1.96 * s["sem"], s["mean"] + 1.96 * s["sem"], alpha=0.2)
    ax.set_title(env)
    ax.legend()
    fig.savefig(here / f"sac_{env}.png", dpi=120)
''',
}


def write_plot_script(out_dir, name: str) -> Path:
    path = Path(out_dir) / f"plot_{name.replace('-', '_')}.py"
    path.write_text(PLOT_SCRIPTS[name])
    return path
