"""Figures for run reports. Everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def loss_curves(curves: dict, path) -> Path:
    """Per-epoch training losses (left) and validation RMSE (right)."""
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_v) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        for name, ys in curves.items():
            if not len(ys) or name.endswith("val_rmse"):
                continue
            ax_l.plot(np.arange(1, len(ys) + 1), ys, label=name, lw=1.2)
        ax_l.set_yscale("log")
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("training loss")
        ax_l.legend()
        vals = curves.get("darec_val_rmse") or []
        if vals:
            ep, v = zip(*vals)
            ax_v.plot(ep, v, marker="o", ms=3, lw=1.2, color="C3")
        ax_v.set_xlabel("epoch")
        ax_v.set_ylabel("target validation RMSE")
        return _save(fig, path)


def sweep_plot(rows: list[dict], axis: str, path, metric: str = "rmse_target") -> Path:
    """Mean and spread of ``metric`` against a swept config axis, one line per variant."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for variant in sorted({r["variant"] for r in rows}):
            sel = [r for r in rows if r["variant"] == variant]
            xs = sorted({r[axis] for r in sel})
            per = [[r[metric] for r in sel if r[axis] == x] for x in xs]
            mean = np.array([np.mean(p) for p in per])
            std = np.array([np.std(p) for p in per])
            ax.errorbar(xs, mean, yerr=std, marker="o", capsize=3, lw=1.2, label=f"{variant}-DARec")
        if axis == "k":
            ax.set_xscale("log", base=2)
        ax.set_xlabel(axis)
        ax.set_ylabel(metric.replace("_", " "))
        ax.legend()
        return _save(fig, path)


def comparison_bars(labels: list[str], means, stds, path, ylabel: str = "target test RMSE") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(labels))
        bars = ax.bar(x, means, yerr=stds, capsize=4, color=[f"C{j}" for j in range(len(labels))])
        for b, m in zip(bars, means):
            ax.annotate(f"{m:.3f}", (b.get_x() + b.get_width() / 2, m), ha="center", va="bottom",
                        xytext=(0, 3), textcoords="offset points", fontsize=8)
        ax.set_xticks(x, labels)
        ax.set_ylabel(ylabel)
        lo = min(means) - 2 * max(max(stds), 0.02)
        ax.set_ylim(max(0.0, lo), None)
        return _save(fig, path)
