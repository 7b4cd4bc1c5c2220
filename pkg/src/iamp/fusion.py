"""Motion grids fused over corridors, expected positions and displacement errors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corridors import Corridor
from .markov import Discretization, s_marginal

GRID_RESOLUTION = 0.5
LANE_HALF_WIDTH = 1.75
LATERAL_SAMPLES = 15


class CorridorProbabilityError(ValueError):
    pass


class ZeroMassError(ValueError):
    pass


class LengthMismatchError(ValueError):
    pass


def cell_arc_lengths(corridor: Corridor, disc: Discretization) -> np.ndarray:
    """Corridor arc length of each s-cell centre; cell 0 is centred on the vehicle."""
    return corridor.start_s + np.arange(disc.n_s) * disc.ds


@dataclass
class MotionGrid:
    vehicle_id: int
    step: int
    resolution: float
    cells: dict[tuple[int, int], float]
    by_corridor: dict[int, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.cells.values()))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        keys = sorted(self.cells)
        ij = np.array(keys, dtype=int).reshape(-1, 2)
        return ij[:, 0], ij[:, 1], np.array([self.cells[k] for k in keys])


def lateral_kernel(half_width: float = LANE_HALF_WIDTH, n: int = LATERAL_SAMPLES):
    """Offsets and triangular weights across the lane, summing to one."""
    d = np.linspace(-half_width, half_width, n + 2)[1:-1]
    w = 1.0 - np.abs(d) / half_width
    return d, w / w.sum()


def paint(corridor: Corridor, s_mass: np.ndarray, disc: Discretization, scale: float = 1.0,
          resolution: float = GRID_RESOLUTION, half_width: float = LANE_HALF_WIDTH) -> dict[tuple[int, int], float]:
    """Spread an s-marginal over 2-D cells around the corridor centreline."""
    idx = np.flatnonzero(s_mass > 0)
    if len(idx) == 0:
        return {}
    # uniform along the cell, one sample per grid resolution
    n_long = max(1, int(np.ceil(disc.ds / resolution)))
    ds_off = ((np.arange(n_long) + 0.5) / n_long - 0.5) * disc.ds
    s = (cell_arc_lengths(corridor, disc)[idx][:, None] + ds_off[None, :]).ravel()
    d, w = lateral_kernel(half_width)
    ss = np.repeat(s, len(d))
    dd = np.tile(d, len(s))
    pts = corridor.centerline.unproject(ss, dd)
    cell_w = np.repeat(s_mass[idx], n_long) / n_long
    mass = (cell_w[:, None] * w[None, :]).ravel() * scale
    ij = np.floor(np.asarray(pts) / resolution).astype(np.int64)
    keys, inverse = np.unique(ij, axis=0, return_inverse=True)
    sums = np.bincount(inverse.ravel(), weights=mass)
    return {(int(k[0]), int(k[1])): float(m) for k, m in zip(keys, sums)}


def render_grid(vehicle_id: int, corridor_predictions, disc: Discretization,
                resolution: float = GRID_RESOLUTION, half_width: float = LANE_HALF_WIDTH) -> list[MotionGrid]:
    """One grid per prediction step from ``(corridor, prob, [p_1..p_K])`` tuples."""
    probs = np.array([prob for _, prob, _ in corridor_predictions], dtype=float)
    if len(probs) == 0 or abs(probs.sum() - 1.0) > 1e-6:
        raise CorridorProbabilityError(f"corridor probabilities sum to {probs.sum():.9f}, expected 1")
    n_steps = len(corridor_predictions[0][2])
    grids = []
    for k in range(n_steps):
        cells: dict[tuple[int, int], float] = {}
        by_corridor = {}
        for corridor, prob, dists in corridor_predictions:
            if prob <= 0:
                continue
            painted = paint(corridor, s_marginal(dists[k], disc), disc, prob, resolution, half_width)
            for key, m in painted.items():
                cells[key] = cells.get(key, 0.0) + m
            by_corridor[corridor.id] = float(prob * dists[k].sum())
        grids.append(MotionGrid(vehicle_id, k + 1, resolution, cells, by_corridor))
    return grids


def expected_position(dist: np.ndarray, corridor: Corridor, disc: Discretization) -> np.ndarray:
    """Mass-weighted mean of centreline points at the s-cell centres."""
    m = s_marginal(dist, disc)
    total = m.sum()
    if total <= 0:
        raise ZeroMassError("distribution has no mass")
    idx = np.flatnonzero(m > 0)
    pts = corridor.centerline.point_at(cell_arc_lengths(corridor, disc)[idx])
    return (m[idx] @ pts) / total


def ade_fde(predicted, ground_truth) -> tuple[float, float]:
    pred = np.asarray(predicted, dtype=float).reshape(-1, 2)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1, 2)
    if len(pred) != len(gt) or len(pred) == 0:
        raise LengthMismatchError(f"{len(pred)} predicted vs {len(gt)} ground-truth positions")
    err = np.linalg.norm(pred - gt, axis=1)
    return float(err.mean()), float(err[-1])


def min_over_corridors(per_corridor, joint_min: bool = False) -> tuple[float, float]:
    """Minimum ADE and FDE over corridor hypotheses.

    By default both are minimized independently; with ``joint_min`` the FDE
    of the corridor with the lowest ADE is reported.
    """
    vals = [(float(a), float(f)) for a, f in per_corridor]
    if not vals:
        raise ValueError("no corridor errors given")
    if joint_min:
        return min(vals, key=lambda af: af[0])
    return min(a for a, _ in vals), min(f for _, f in vals)


def write_grids_csv(grids: list[MotionGrid], path, append: bool = False, extra: dict | None = None) -> None:
    """Rows ``vehicle_id,step,cell_x,cell_y,mass`` (plus ``extra`` columns)."""
    path = Path(path)
    extra = extra or {}
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(list(extra) + ["vehicle_id", "step", "cell_x", "cell_y", "mass"])
        for g in grids:
            for (i, j) in sorted(g.cells):
                w.writerow(list(extra.values()) + [g.vehicle_id, g.step, i, j, f"{g.cells[(i, j)]:.9g}"])
