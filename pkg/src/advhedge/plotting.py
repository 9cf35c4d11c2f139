"""Figures written to files (Agg backend; nothing is shown interactively)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_history(history, path, title: str = "") -> Path:
    epochs = np.array([r.epoch for r in history])
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(epochs, [r.hedger_loss for r in history], lw=0.8, label="hedger loss")
    gen = np.array([r.generator_objective for r in history])
    if np.isfinite(gen).any():
        ax.plot(epochs, gen, lw=0.8, alpha=0.7, label="generator objective")
    val = np.array([r.validation_cost for r in history])
    ok = np.isfinite(val)
    if ok.any():
        ax.plot(epochs[ok], val[ok], "o-", ms=3, label="validation cost")
    ax.set_xlabel("epoch")
    ax.set_ylabel("hedge cost")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_case1(sweeps: dict, path) -> Path:
    """``sweeps`` maps a utility label to a 1-D delta sweep."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for label, s in sweeps.items():
        d = s.axis("delta")
        ax.plot(d, s.values, label=f"{label} (peak {s.argmax_delta():.4f})")
    ax.set_xlabel("delta")
    ax.set_ylabel("utility")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_case2(sweep, path, trajectory=None, stride: int = 2) -> Path:
    d, m = sweep.axis("delta"), sweep.axis("mu")
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    mesh = ax.pcolormesh(d, m, sweep.values.T, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="utility")
    if sweep.gradients:
        # hedger ascends, generator descends: arrows show the joint update direction
        gd = sweep.gradients["delta"][::stride, ::stride].T
        gm = -sweep.gradients["mu"][::stride, ::stride].T
        ax.quiver(d[::stride], m[::stride], gd, gm, color="w", width=0.003)
    if trajectory is not None:
        ax.plot(trajectory.deltas, trajectory.mus, "r-", lw=1.2)
        ax.plot(*trajectory.final, "r*", ms=9)
    ax.set_xlabel("delta")
    ax.set_ylabel("mu")
    return _save(fig, path)


def plot_case3(sweep, path) -> Path:
    d, s = sweep.axis("delta"), sweep.axis("sigma")
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
    mesh = a1.pcolormesh(d, s, sweep.values.T, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=a1, label="utility")
    a1.set_xlabel("delta")
    a1.set_ylabel("sigma")
    for j, sig in enumerate(s):
        a2.plot(d, sweep.values[:, j], label=f"sigma={sig:g}")
    a2.set_xlabel("delta")
    a2.set_ylabel("utility")
    a2.legend(fontsize=7)
    return _save(fig, path)


def plot_pl_histogram(report, path) -> Path:
    edges = np.array(report.bin_edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    first = report.rows[0].utility
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for r in report.rows:
        if r.utility == first:
            ax.bar(centers, r.hist_counts, width=width, alpha=0.5, label=r.strategy)
    ax.set_xlabel("window PL")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_paths(prices: np.ndarray, path, max_paths: int = 50, title: str = "") -> Path:
    prices = np.asarray(prices)
    k = min(max_paths, prices.shape[0])
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.plot(prices[:k].T, lw=0.6, alpha=0.7)
    ax.set_xlabel("step")
    ax.set_ylabel("price")
    ax.set_title(title or f"{k} of {prices.shape[0]} paths")
    return _save(fig, path)

