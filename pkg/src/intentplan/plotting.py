"""Evaluation figures written to PNG files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .artifacts import write_with  # noqa: E402
from .metrics import coverage_region, covered_cells  # noqa: E402

COLORS = {"proceed": "tab:red", "yield": "tab:blue", "planned": "tab:orange", "real": "tab:gray"}


def _save(fig, path) -> Path:
    path = Path(path)
    write_with(path, lambda tmp: fig.savefig(tmp, dpi=110, format="png",
                                             metadata={"Software": None}))
    plt.close(fig)
    return path


def plot_xy(path, scenario, real: Sequence, planned: Sequence, decisions: Sequence[str]) -> Path:
    """Executed (solid) and logged (dotted) left-turn paths over the intersection."""
    fig, ax = plt.subplots(figsize=(6.5, 6.0))
    poly = np.vstack([scenario.intersection, scenario.intersection[:1]])
    ax.plot(poly[:, 0], poly[:, 1], color="k", lw=1.0)
    for p in (scenario.left_path, scenario.straight_path):
        ax.plot(p.xy[:, 0], p.xy[:, 1], color="k", lw=0.5, ls="--")
    for r, p, d in zip(real, planned, decisions):
        c = COLORS.get(d, "k")
        ax.plot(r[:, 0], r[:, 1], color=c, lw=0.6, ls=":", alpha=0.6)
        if p is not None:
            ax.plot(p[:, 0], p[:, 1], color=c, lw=0.8, alpha=0.8)
    pts = np.vstack(list(real) + [scenario.intersection])
    ax.set_xlim(pts[:, 0].min() - 5, pts[:, 0].max() + 5)
    ax.set_ylim(pts[:, 1].min() - 5, pts[:, 1].max() + 5)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    for d in ("proceed", "yield"):
        ax.plot([], [], color=COLORS[d], label=d)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_sl(path, scenario, trajs: Sequence, decisions: Sequence[str], title: str = "") -> Path:
    """Lateral offset against normalized arc length, one panel per decision."""
    L = scenario.left_path.total_length
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6), sharey=True)
    for ax, d in zip(axes, ("proceed", "yield")):
        for tr, dd in zip(trajs, decisions):
            if dd == d and tr is not None:
                ax.plot(tr.s / L, tr.l, color=COLORS[d], lw=0.6, alpha=0.6)
        ax.axvline(scenario.stop_line_s / L, color="k", lw=0.8, ls="--")
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set_title(f"{title} {d}".strip())
        ax.set_xlabel("s / L")
    axes[0].set_ylabel("l [m]")
    return _save(fig, path)


def plot_distributions(path, per_event: Sequence[dict]) -> Path:
    """Planned vs logged travel time and PET histograms."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for ax, key, unit in zip(axes, ("travel_time", "pet"), ("s", "s")):
        data = {}
        for method in ("planned", "real"):
            col = f"{'plan' if method == 'planned' else 'real'}_{key}"
            vals = [r[col] for r in per_event if r.get(col) is not None]
            data[method] = np.asarray(vals, float)
        both = np.concatenate(list(data.values()))
        if both.size:
            bins = np.linspace(both.min(), both.max() + 1e-9, 16)
            for method, vals in data.items():
                ax.hist(vals, bins=bins, alpha=0.55, color=COLORS[method], label=method)
        ax.set_xlabel(f"{key.replace('_', ' ')} [{unit}]")
        ax.legend(fontsize=8)
    axes[0].set_ylabel("events")
    return _save(fig, path)


def plot_coverage(path, planned: Sequence[np.ndarray], real: Sequence[np.ndarray],
                  cell: float = 0.5, pad: float = 2.0) -> Path:
    """Occupied grid cells: logged only, planned only, both."""
    region = coverage_region(real, pad)
    p = covered_cells(planned, cell, region)
    r = covered_cells(real, cell, region)
    nx = int(np.ceil((region[2] - region[0]) / cell)) + 1
    ny = int(np.ceil((region[3] - region[1]) / cell)) + 1
    img = np.zeros((ny, nx))
    for i, j in r:
        img[j, i] += 1
    for i, j in p:
        img[j, i] += 2
    fig, ax = plt.subplots(figsize=(6.5, 6.0))
    cmap = matplotlib.colors.ListedColormap(["white", "tab:gray", "tab:orange", "tab:green"])
    ax.imshow(img, origin="lower", cmap=cmap, vmin=-0.5, vmax=3.5, interpolation="nearest",
              extent=(region[0], region[0] + nx * cell, region[1], region[1] + ny * cell))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"cells: real {len(r)}, planned {len(p)}, both {len(p & r)}")
    return _save(fig, path)


def plot_training(path, model) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for key, res in sorted(model.history.items()):
        c = COLORS.get(key, "k")
        axes[0].plot(res.log_likelihood, color=c, label=key)
        axes[1].semilogy(np.maximum(res.grad_norm, 1e-16), color=c, label=key)
    axes[0].set_ylabel("objective")
    axes[1].set_ylabel("gradient norm")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.legend(fontsize=8)
    return _save(fig, path)
