"""Planar polyline utilities shared by the map, corridor and relation layers."""

from __future__ import annotations

import math

import numpy as np


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class Polyline:
    """Piecewise-linear curve with an arc-length parameterization.

    Consecutive duplicate vertices are dropped on construction, so every
    stored segment has positive length.
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) >= 2:
            keep = np.ones(len(pts), dtype=bool)
            keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12
            pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("a polyline needs at least two distinct points")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.seg_dir = seg / self.seg_len[:, None]
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def __len__(self) -> int:
        return len(self.points)

    def _segment_index(self, s):
        idx = np.searchsorted(self.s, s, side="right") - 1
        return np.clip(idx, 0, len(self.seg_len) - 1)

    def point_at(self, s):
        """Point(s) at arc length ``s``; linear extrapolation past either end."""
        s_arr = np.asarray(s, dtype=float)
        idx = self._segment_index(s_arr)
        out = self.points[idx] + (s_arr - self.s[idx])[..., None] * self.seg_dir[idx]
        return out

    def tangent_at(self, s):
        return self.seg_dir[self._segment_index(np.asarray(s, dtype=float))]

    def heading_at(self, s):
        t = self.tangent_at(s)
        return np.arctan2(t[..., 1], t[..., 0])

    def unproject(self, s, d):
        """Map Frenet coordinates back to the plane (``d`` positive to the left)."""
        t = self.tangent_at(s)
        normal = np.stack([-t[..., 1], t[..., 0]], axis=-1)
        return self.point_at(s) + np.asarray(d, dtype=float)[..., None] * normal

    def project(self, point) -> tuple[float, float, float]:
        """Return ``(s, d, distance)`` of the nearest point on the polyline.

        ``s`` is clamped to ``[0, length]``; ``d`` is the signed lateral
        offset, positive left of the travel direction, with ``|d|`` equal to
        the distance.  On exact ties the segment with the smaller index wins;
        a point on the extension of an end segment counts as left.
        """
        p = np.asarray(point, dtype=float)
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self.seg_dir)
        t = np.clip(t, 0.0, self.seg_len)
        foot = self.points[:-1] + t[:, None] * self.seg_dir
        dist = np.linalg.norm(p - foot, axis=1)
        i = int(np.argmin(dist))
        side = float(_cross(self.seg_dir[i], p - foot[i]))
        d = -float(dist[i]) if side < 0.0 else float(dist[i])
        return float(self.s[i] + t[i]), d, float(dist[i])

    def longitudinal_overshoot(self, point) -> float:
        """How far ``point`` lies before the start (<0) or past the end (>0)."""
        p = np.asarray(point, dtype=float)
        before = float(np.dot(p - self.points[0], self.seg_dir[0]))
        after = float(np.dot(p - self.points[-1], self.seg_dir[-1]))
        if before < 0.0:
            return before
        if after > 0.0:
            return after
        return 0.0

    def resample(self, step: float) -> "Polyline":
        n = max(2, int(math.ceil(self.length / step - 1e-9)) + 1)
        return Polyline(self.point_at(np.linspace(0.0, self.length, n)))

    def resample_n(self, n: int) -> np.ndarray:
        return self.point_at(np.linspace(0.0, self.length, n))

    def slice(self, s0: float, s1: float) -> "Polyline":
        s0 = max(0.0, s0)
        s1 = min(self.length, s1)
        inner = self.points[(self.s > s0) & (self.s < s1)]
        pts = np.vstack([self.point_at(s0)[None], inner, self.point_at(s1)[None]])
        return Polyline(pts)


def concatenate(polylines: list[Polyline]) -> Polyline:
    """Join polylines end to start, dropping coincident joint points."""
    pts = [polylines[0].points]
    for pl in polylines[1:]:
        nxt = pl.points
        if np.linalg.norm(nxt[0] - pts[-1][-1]) < 1e-6:
            nxt = nxt[1:]
        pts.append(nxt)
    return Polyline(np.vstack(pts))


def segment_intersections(a: Polyline, b: Polyline, eps: float = 1e-12):
    """All proper or touching crossings between two polylines.

    Returns a list of ``(s_a, s_b, point)``; parallel segments are ignored.
    """
    a0 = a.points[:-1, None, :]
    r = (a.points[1:] - a.points[:-1])[:, None, :]
    b0 = b.points[None, :-1, :]
    q = (b.points[1:] - b.points[:-1])[None, :, :]
    denom = _cross(r, q)
    qp = b0 - a0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(qp, q) / denom
        u = _cross(qp, r) / denom
    tol = 1e-9
    hit = (np.abs(denom) > eps) & (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)
    out = []
    for i, j in zip(*np.nonzero(hit)):
        ti = min(max(float(t[i, j]), 0.0), 1.0)
        uj = min(max(float(u[i, j]), 0.0), 1.0)
        s_a = float(a.s[i] + ti * a.seg_len[i])
        s_b = float(b.s[j] + uj * b.seg_len[j])
        out.append((s_a, s_b, a.points[i] + ti * (a.points[i + 1] - a.points[i])))
    out.sort(key=lambda item: (item[0], item[1]))
    return out


def three_point_curvature(points: np.ndarray) -> np.ndarray:
    """Signed curvature at each vertex from the circumscribed circle (left positive).

    End vertices copy their neighbour's value.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    k = np.zeros(n)
    if n < 3:
        return k
    p0, p1, p2 = pts[:-2], pts[1:-1], pts[2:]
    a = np.linalg.norm(p1 - p0, axis=1)
    b = np.linalg.norm(p2 - p1, axis=1)
    c = np.linalg.norm(p2 - p0, axis=1)
    denom = a * b * c
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.where(denom > 1e-12, 2.0 * _cross(p1 - p0, p2 - p1) / denom, 0.0)
    k[1:-1] = inner
    k[0] = k[1]
    k[-1] = k[-2]
    return k


def arc_points(center, radius: float, a0: float, a1: float, step: float = 0.25) -> np.ndarray:
    """Points along a circular arc from angle ``a0`` to ``a1`` (radians)."""
    n = max(2, int(math.ceil(abs(a1 - a0) * radius / step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def offset_polyline(points: np.ndarray, offset: float) -> np.ndarray:
    """Offset each vertex along the averaged left normal by ``offset``."""
    pts = np.asarray(points, dtype=float)
    tan = np.gradient(pts, axis=0)
    tan /= np.linalg.norm(tan, axis=1)[:, None]
    normal = np.column_stack([-tan[:, 1], tan[:, 0]])
    return pts + offset * normal


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi
