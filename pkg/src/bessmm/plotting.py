"""Report figures. Rendered with the Agg canvas (no global pyplot state) and saved
without timestamps so reruns produce identical files."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_META = {"Software": None}


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, metadata=_META)
    return path


def plot_tau_scan(results: Sequence, path: str | Path, threshold: float = 0.97) -> Path:
    """Mean VCR against achieved tau, one line per generator, with CI bands."""
    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot()
    for r in results:
        x = np.asarray(r.achieved_tau)
        y = np.asarray(r.vcr_mean)
        ci = np.asarray(r.vcr_ci)
        ax.plot(x, y, marker="o", ms=3, label=f"{r.method} (tau* {r.tau_star_interp:.3f})")
        ax.fill_between(x, y - ci, y + ci, alpha=0.25)
    ax.axhline(threshold, color="grey", ls="--", lw=1)
    ax.set_xlabel("achieved Kendall tau")
    ax.set_ylabel("value capture ratio")
    ax.set_title("bands: normal-approximation 95% CI", fontsize=9)
    ax.set_ylim(min(-0.1, ax.get_ylim()[0]), 1.05)
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_ablation(result, path: str | Path) -> Path:
    rows = result.rows
    names = [r.name for r in rows]
    vals = [r.vcr if math.isfinite(r.vcr) else 0.0 for r in rows]
    colors = ["tab:grey" if r.flagged else "tab:blue" for r in rows]
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.add_subplot()
    ax.bar(range(len(rows)), vals, color=colors)
    ax.set_xticks(range(len(rows)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("VCR vs configuration oracle")
    ax.axhline(1.0, color="black", lw=0.8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_eval(reports: Sequence, path: str | Path) -> Path:
    fig = Figure(figsize=(5.6, 4.2))
    ax = fig.add_subplot()
    for r in reports:
        ax.scatter(r.mae, r.vcr)
        ax.annotate(r.name, (r.mae, r.vcr), fontsize=8, xytext=(4, 4), textcoords="offset points")
    ax.set_xlabel("MAE (EUR/MWh)")
    ax.set_ylabel("VCR")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_hydro(z: np.ndarray, revenue: np.ndarray, fit, leadlag, path: str | Path) -> Path:
    fig = Figure(figsize=(9.0, 3.8))
    ax1 = fig.add_subplot(1, 2, 1)
    ax1.scatter(z, revenue, s=8, alpha=0.6)
    xs = np.linspace(np.nanmin(z), np.nanmax(z), 50)
    ax1.plot(xs, fit.intercept + fit.slope * xs, color="tab:red",
             label=f"slope {fit.slope:.0f}, R2 {fit.r2:.3f}")
    ax1.set_xlabel("reservoir anomaly z")
    ax1.set_ylabel("weekly revenue")
    ax1.legend(fontsize=8)
    ax2 = fig.add_subplot(1, 2, 2)
    ax2.bar(leadlag.lags, leadlag.rho)
    ax2.set_xlabel("lag (weeks)")
    ax2.set_ylabel("Spearman rho")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_simulation(result, path: str | Path) -> Path:
    weeks = [w.week for w in result.weeks]
    cap = np.array([w.capacity_revenue for w in result.weeks])
    energy = np.array([sum(d.energy_net for d in w.days) for w in result.weeks])
    fig = Figure(figsize=(6.4, 3.8))
    ax = fig.add_subplot()
    x = np.arange(len(weeks))
    ax.bar(x, cap, label="reserve capacity")
    ax.bar(x, energy, bottom=np.where(energy >= 0, cap, 0.0), label="energy (net)")
    ax.set_xticks(x, [str(w) for w in weeks], fontsize=8)
    ax.set_xlabel("week")
    ax.set_ylabel("EUR")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
