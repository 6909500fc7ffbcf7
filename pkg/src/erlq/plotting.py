"""Static SVG line charts of run histories."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .history import RunHistory  # noqa: E402

# fixed ids and no timestamp so identical data gives identical bytes
matplotlib.rcParams["svg.hashsalt"] = "erlq"
SVG_META = {"Date": None, "Creator": None}

SBRPG_PANELS = (
    ("f", "cost f(K, Sigma)", False, "sbrpg_cost.svg"),
    ("relative_gap", "relative error |f - f*| / f*", True, "sbrpg_relative_gap.svg"),
    ("k_sq_err", "squared error |K - K*|^2", True, "sbrpg_k_error.svg"),
    ("sigma_sq_err", "squared error |Sigma - Sigma*|^2", True, "sbrpg_sigma_error.svg"),
)


def line_chart(x, y, path, ylabel: str, log: bool = False, title: str = "",
               reference=None, xlabel: str = "iteration") -> Path:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y) & (y > 0 if log else True)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(x[keep], y[keep], lw=1.4)
    if reference is not None:
        ax.axhline(reference, color="0.4", ls="--", lw=1.0)
    if log:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def plot_rpg(hist: RunHistory, out_dir) -> list[Path]:
    gap = np.abs(hist.column("gap"))
    return [line_chart(hist.column("iter"), gap, Path(out_dir) / "rpg_gap.svg",
                       "f - f*", log=True, title="RPG optimality gap")]


def plot_sbrpg(hist: RunHistory, out_dir) -> list[Path]:
    it = hist.column("iter")
    paths = []
    for col, label, log, name in SBRPG_PANELS:
        ref = hist.f_star if col == "f" else None
        paths.append(line_chart(it, hist.column(col), Path(out_dir) / name, label, log=log,
                                reference=ref))
    return paths
