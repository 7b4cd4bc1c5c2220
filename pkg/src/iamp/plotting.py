"""SVG figures for motion grids, acceleration distributions and run summaries."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PatchCollection  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .fusion import MotionGrid  # noqa: E402
from .map_model import LaneletMap  # noqa: E402

plt.rcParams["svg.hashsalt"] = "iamp"


def _draw_map(ax, lmap: LaneletMap) -> None:
    for ll in lmap.lanelets.values():
        for bound in (ll.left_bound, ll.right_bound):
            ax.plot(bound[:, 0], bound[:, 1], color="0.6", lw=0.6, zorder=1)


def plot_motion_grid(lmap: LaneletMap, grids: list[MotionGrid], ground_truth: dict, path,
                     title: str = "") -> Path:
    """Fused occupancy (maximum over prediction steps) with recorded positions.

    ``ground_truth`` maps vehicle id to an ``(N, 2)`` array of positions.
    """
    fig, ax = plt.subplots(figsize=(7, 7))
    _draw_map(ax, lmap)
    cells: dict[tuple[int, int], float] = {}
    res = grids[0].resolution if grids else 0.5
    for g in grids:
        for key, m in g.cells.items():
            cells[key] = max(cells.get(key, 0.0), m)
    if cells:
        keys = sorted(cells)
        mass = np.array([cells[k] for k in keys])
        rects = [Rectangle((i * res, j * res), res, res) for i, j in keys]
        pc = PatchCollection(rects, cmap="viridis", zorder=2)
        pc.set_array(mass)
        ax.add_collection(pc)
        fig.colorbar(pc, ax=ax, shrink=0.7, label="occupancy probability")
    pts = []
    for vid, gt in sorted(ground_truth.items()):
        gt = np.asarray(gt)
        ax.plot(gt[:, 0], gt[:, 1], "o-", ms=2.5, lw=1.0, color="tab:red", zorder=3)
        ax.annotate(str(vid), gt[0], fontsize=8, zorder=4)
        pts.append(gt)
    if cells:
        ij = np.array(sorted(cells), dtype=float) * res
        pts.append(ij)
    if pts:
        allp = np.vstack(pts)
        lo, hi = allp.min(axis=0) - 15.0, allp.max(axis=0) + 15.0
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_accel_distributions(dist, accel_edges: np.ndarray, path, title: str = "") -> Path:
    """Input-cell masses per prediction step plus the mean and spread."""
    masses = np.asarray(dist.masses)
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    steps = np.arange(1, len(masses) + 1)
    mesh = ax0.pcolormesh(np.arange(len(masses) + 1) + 0.5, accel_edges, masses.T, cmap="magma", shading="flat")
    fig.colorbar(mesh, ax=ax0, label="mass")
    ax0.set_xlabel("prediction step")
    ax0.set_ylabel("acceleration [m/s²]")
    ax1.errorbar(steps, dist.means, yerr=dist.stds, fmt="o-", capsize=3)
    ax1.set_xlabel("prediction step")
    ax1.set_ylabel("acceleration [m/s²]")
    ax1.axhline(0.0, color="0.7", lw=0.8)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_summary(summary: dict, path) -> Path:
    """Bar chart of mADE, mFDE and time per step for each mode."""
    modes = [m for m in ("baseline", "hybrid") if m in summary]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3.5))
    for ax, key, label in zip(axes, ("mADE", "mFDE", "time_per_step"), ("mADE [m]", "mFDE [m]", "time/step [s]")):
        vals = [summary[m].get(key, 0.0) for m in modes]
        ax.bar(modes, vals, color=["tab:blue", "tab:orange"][:len(modes)])
        ax.set_ylabel(label)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
