"""Report figures, rendered straight to PNG files.

Uses the object-oriented matplotlib API (no pyplot state), so figures can be
produced from concurrent runs and never need a display.
"""

from __future__ import annotations

import io
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}

FEATURE_COLORS = {
    "dt": "tab:blue", "sz": "tab:red", "mm_dt": "tab:cyan",
    "sd_dt": "tab:purple", "mm_sz": "tab:orange", "sd_sz": "tab:brown",
}


def new_figure(width=5.0, height=None, ncols=1):
    golden = (math.sqrt(5) - 1.0) / 2.0
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, height or width * golden))
        FigureCanvasAgg(fig)
        axes = [fig.add_subplot(1, ncols, i + 1) for i in range(ncols)]
    return fig, (axes[0] if ncols == 1 else axes)


def render_png(fig: Figure) -> bytes:
    buf = io.BytesIO()
    with matplotlib.rc_context(STYLE):
        fig.tight_layout()
        # no timestamp or version metadata, so identical inputs give identical bytes
        fig.savefig(buf, format="png", metadata={"Software": None})
    return buf.getvalue()


def roc_figure(curves: dict, title: str = "ROC") -> Figure:
    """``curves`` maps a legend name to ``(RocCurve, auc)``."""
    fig, ax = new_figure(4.2, 4.0)
    ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
    for name, (curve, area) in curves.items():
        ax.step(curve.fpr, curve.tpr, where="post", lw=1.4, label=f"{name} (AUC {area:.4f})")
    ax.set_xlim(-0.01, 1.01)
    ax.set_ylim(-0.01, 1.01)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    return fig


def rates_figure(per_class: dict, title: str = "") -> Figure:
    """TPR and FPR bars per class (one-vs-rest)."""
    names = list(per_class)
    fig, (ax_t, ax_f) = new_figure(max(5.0, 0.45 * len(names) + 2), 3.6, ncols=2)
    x = range(len(names))
    ax_t.bar(x, [per_class[n]["tpr"] for n in names], color="tab:green")
    ax_f.bar(x, [per_class[n]["fpr"] for n in names], color="tab:red")
    for ax, label in ((ax_t, "TPR"), (ax_f, "FPR")):
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=60, ha="right")
        ax.set_ylabel(label)
    ax_t.set_ylim(0, 1)
    if title:
        fig.suptitle(title)
    return fig


def importance_figure(sweep: dict, title: str = "") -> Figure:
    """Grouped bars of importance score per feature for each window length."""
    windows = sorted(sweep, key=int)
    features = list(next(iter(sweep.values())))
    fig, ax = new_figure(6.0, 3.4)
    width = 0.8 / len(features)
    for j, feat in enumerate(features):
        xs = [i + (j - (len(features) - 1) / 2) * width for i in range(len(windows))]
        ax.bar(xs, [sweep[w][feat]["score"] for w in windows], width,
               label=feat, color=FEATURE_COLORS.get(feat))
    ax.set_xticks(range(len(windows)))
    ax.set_xticklabels([str(w) for w in windows])
    ax.set_xlabel("window length w (packets)")
    ax.set_ylabel("importance (mean / std of error increase)")
    ax.legend(ncol=3)
    if title:
        ax.set_title(title)
    return fig


def quantile_figure(summaries: dict, series: str = "sz", log_scale=False, title="") -> Figure:
    """Candle-sticks: min..max whiskers, q05..q95 box, q50 marker.

    ``series`` is ``"sz"`` for packet sizes or ``"dt"`` for interarrivals.
    """
    names = list(summaries)
    fig, ax = new_figure(max(5.0, 0.35 * len(names) + 2), 3.6)
    for i, name in enumerate(names):
        s = summaries[name]
        lo, q05, q50, q95, hi = (getattr(s, f"{k}_{series}") for k in
                                 ("min", "q05", "q50", "q95", "max"))
        ax.vlines(i, lo, hi, color="0.3", lw=0.8)
        ax.vlines(i, q05, q95, color="tab:blue", lw=5)
        ax.plot(i, q50, "o", color="tab:red", ms=4)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right")
    ax.set_ylabel("packet size [bytes]" if series == "sz" else "interarrival [s]")
    if log_scale:
        ax.set_yscale("log")
    if title:
        ax.set_title(title)
    return fig


def save(fig: Figure, path: Path, writer) -> Path:
    """Render ``fig`` and hand the PNG bytes to ``writer(path, data)``."""
    writer(Path(path), render_png(fig))
    return Path(path)
