"""Corridor enumeration: horizon-limited lanelet sequences per vehicle."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Polyline, concatenate, three_point_curvature, wrap_angle
from .map_model import LaneletMap, MapError

HEADING_GATE = math.radians(60.0)
CURVATURE_SPACING = 0.5


class NoMatchingLaneletError(MapError):
    pass


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    x: float
    y: float
    heading: float
    v: float
    a: float = 0.0
    length: float = 4.5
    width: float = 1.8

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True, eq=False)
class Corridor:
    id: int
    vehicle_id: int
    lanelet_seq: tuple[int, ...]
    centerline: Polyline
    start_s: float
    lanelet_offsets: tuple[float, ...]
    speed_limits: tuple[float, ...]
    curvature_s: np.ndarray
    curvature_profile: np.ndarray

    @property
    def length(self) -> float:
        return self.centerline.length

    def with_start(self, start_s: float) -> "Corridor":
        return dataclasses.replace(self, start_s=float(start_s))

    def lanelet_index_at(self, s) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.lanelet_offsets), s, side="right") - 1
        return np.clip(idx, 0, len(self.lanelet_seq) - 1)

    def lanelet_at(self, s: float) -> int:
        return self.lanelet_seq[int(self.lanelet_index_at(s))]

    def lanelet_start(self, lanelet_id: int) -> float:
        return self.lanelet_offsets[self.lanelet_seq.index(lanelet_id)]

    def speed_limit_at(self, s):
        return np.asarray(self.speed_limits)[self.lanelet_index_at(s)]

    def curvature_at(self, s):
        return np.interp(s, self.curvature_s, self.curvature_profile)

    def project(self, point) -> tuple[float, float]:
        s, d, _ = self.centerline.project(point)
        return s, d


def build_corridor(lmap: LaneletMap, corridor_id: int, vehicle_id: int, seq, geometry_seq,
                   start_s: float, max_length: float | None = None) -> Corridor:
    """Assemble a corridor from lanelets; ``geometry_seq`` supplies the centerline.

    ``seq`` may carry a leading lane-change origin that contributes no geometry.
    """
    parts = [lmap[lid].centerline for lid in geometry_seq]
    offsets = []
    acc = 0.0
    prev_end = None
    for pl in parts:
        if prev_end is not None:
            gap = float(np.linalg.norm(pl.points[0] - prev_end))
            acc += gap if gap >= 1e-6 else 0.0
        offsets.append(acc)
        acc += pl.length
        prev_end = pl.points[-1]
    centerline = concatenate(parts)
    if max_length is not None and max_length < centerline.length:
        centerline = centerline.slice(0.0, max_length)
    keep = [i for i, off in enumerate(offsets) if off < centerline.length or i == 0]
    geometry_seq = [geometry_seq[i] for i in keep]
    offsets = [offsets[i] for i in keep]
    n_lead = len(seq) - len(parts)
    full_seq = tuple(seq[:n_lead]) + tuple(geometry_seq)
    full_offsets = tuple([0.0] * n_lead + offsets)
    limits = tuple(lmap[lid].speed_limit for lid in full_seq)
    dense = centerline.resample(CURVATURE_SPACING)
    return Corridor(
        id=corridor_id, vehicle_id=vehicle_id, lanelet_seq=full_seq, centerline=centerline,
        start_s=float(start_s), lanelet_offsets=full_offsets, speed_limits=limits,
        curvature_s=dense.s, curvature_profile=three_point_curvature(dense.points),
    )


def match_lanelets(lmap: LaneletMap, pose, lateral_margin: float = 0.5,
                   heading_gate: float = HEADING_GATE) -> list[tuple[int, float, float]]:
    """Lanelets containing ``pose = (x, y, heading)``, as ``(id, s, d)``.

    A lanelet whose predecessor also matches is dropped, so a vehicle sitting
    exactly on a lanelet joint is assigned to the upstream lanelet.
    """
    x, y, heading = pose
    p = np.array([x, y], dtype=float)
    found = {}
    for lid in sorted(lmap.lanelets):
        lan = lmap[lid]
        over = lan.centerline.longitudinal_overshoot(p)
        if abs(over) > 1e-6:
            continue
        s, d, _ = lan.centerline.project(p)
        if abs(d) > lan.half_width_at(s) + lateral_margin:
            continue
        if abs(float(wrap_angle(heading - lan.centerline.heading_at(s)))) > heading_gate:
            continue
        found[lid] = (s, d)
    out = []
    for lid, (s, d) in found.items():
        if any(pred in found for pred in lmap.predecessors(lid)):
            continue
        out.append((lid, s, d))
    return out


def _successor_paths(lmap: LaneletMap, lanelet_id: int, needed: float):
    lan = lmap[lanelet_id]
    if lan.length >= needed or not lan.successors:
        yield (lanelet_id,)
        return
    for succ in sorted(lan.successors):
        for rest in _successor_paths(lmap, succ, needed - lan.length):
            yield (lanelet_id,) + rest


def horizon_distance(v: float, a_max: float, horizon: float) -> float:
    return v * horizon + 0.5 * a_max * horizon ** 2


def enumerate_corridors(lmap: LaneletMap, pose, v: float, a_max: float = 2.0, horizon: float = 4.0,
                        vehicle_id: int = 0, first_id: int = 0, lane_changes: bool = True) -> list[Corridor]:
    """All corridors a vehicle at ``pose`` can follow within the travel bound.

    The bound is ``v*T + a_max*T**2/2`` past the vehicle.  Lane-change
    alternatives switch to an adjacent lanelet of the current one only.
    """
    matches = match_lanelets(lmap, pose)
    if not matches:
        raise NoMatchingLaneletError(f"vehicle {vehicle_id} at {tuple(np.round(pose[:2], 2))} matches no lanelet")
    dist = horizon_distance(max(v, 0.0), a_max, horizon)
    candidates = []  # (seq, geometry_seq, start_s)
    for lid, s0, _ in matches:
        for path in _successor_paths(lmap, lid, s0 + dist):
            candidates.append((path, path, s0))
        if not lane_changes:
            continue
        lan = lmap[lid]
        for adj in (lan.adjacent_left, lan.adjacent_right):
            if adj is None:
                continue
            s_adj, _, _ = lmap[adj].centerline.project(pose[:2])
            for path in _successor_paths(lmap, adj, s_adj + dist):
                candidates.append(((lid,) + path, path, s_adj))
    corridors = []
    seen = set()
    for seq, geo, s0 in candidates:
        c = build_corridor(lmap, first_id + len(corridors), vehicle_id, seq, geo, s0, s0 + dist)
        if c.lanelet_seq in seen:
            continue
        seen.add(c.lanelet_seq)
        corridors.append(c)
    return corridors


def curvature_features(corridor: Corridor, n_segments: int = 6, step: float = 0.05) -> np.ndarray:
    """Integrated positive and negative curvature over equal segments ahead.

    Returns ``[kp_1..kp_n, kn_1..kn_n]``, all non-negative.
    """
    ahead = corridor.length - corridor.start_s
    out = np.zeros(2 * n_segments)
    if ahead < 6 * CURVATURE_SPACING:
        return out
    edges = corridor.start_s + ahead * np.arange(n_segments + 1) / n_segments
    for i in range(n_segments):
        n = max(2, int(math.ceil((edges[i + 1] - edges[i]) / step)) + 1)
        s = np.linspace(edges[i], edges[i + 1], n)
        k = corridor.curvature_at(s)
        out[i] = np.trapezoid(np.maximum(k, 0.0), s)
        out[n_segments + i] = np.trapezoid(np.maximum(-k, 0.0), s)
    return out
