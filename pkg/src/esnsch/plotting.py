"""Static matplotlib figures written next to the CSV they visualize."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _semilog_safe(ax, x, y, **kw):
    y = np.abs(np.asarray(y, dtype=float))
    if np.any(y > 0):
        ax.semilogy(x, np.where(y > 0, y, np.nan), **kw)
    else:
        ax.plot(x, y, **kw)


def plot_diagnostics(csv_path: str | Path) -> list[Path]:
    """Energy, mass drift, divergence residual and max|phi| against time."""
    from .io import read_csv

    csv_path = Path(csv_path)
    d = read_csv(csv_path)
    t = d["t"]
    out = csv_path.with_suffix(".png")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(7.0, 4.8), sharex=True)
        ax = axes[0, 0]
        ax.plot(t, d["E_total"], label="total")
        ax.plot(t, d["E_ch"], "--", label="Ginzburg-Landau")
        ax.plot(t, d["E_kin"], ":", label="kinetic")
        ax.set_ylabel("energy")
        ax.legend(frameon=False)
        ax = axes[0, 1]
        drift = d["mass"] - d["mass"][0] if len(t) else d["mass"]
        ax.plot(t, drift)
        ax.set_ylabel("mass drift")
        ax = axes[1, 0]
        _semilog_safe(ax, t, d["div_residual"], marker=".", ms=3)
        ax.set_ylabel("divergence residual")
        ax.set_xlabel("t")
        ax = axes[1, 1]
        ax.plot(t, d["max_abs_phi"])
        ax.axhline(1.0, color="0.5", lw=0.8, ls="--")
        ax.set_ylabel("max |phi|")
        ax.set_xlabel("t")
        for ax in axes.flat:
            ax.xaxis.set_major_locator(MaxNLocator(4))
        return [_save(fig, out)]


def plot_convergence(csv_path: str | Path, x_col: str, y_cols: list[str]) -> Path:
    """Log-log refinement plot of the columns of a study table."""
    csv_path = Path(csv_path)
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        for c in y_cols:
            ax.loglog(data[x_col], np.abs(data[c]), "o-", label=c)
        ax.set_xlabel(x_col)
        ax.set_ylabel("error")
        ax.legend(frameon=False)
        return _save(fig, csv_path.with_suffix(".png"))


def plot_stability(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        ratio = data["metric"] / data["metric"][0]
        ax.semilogy(data["t"], ratio)
        ax.axhline(100.0, color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("t")
        ax.set_ylabel("metric / metric(0)")
        return _save(fig, csv_path.with_suffix(".png"))
