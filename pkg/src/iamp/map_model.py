"""Lanelet map: drivable segments, connectivity and regulatory elements.

Maps are stored as JSON::

    {"lanelets": [{"id", "left", "right", "successors", "adj_left",
                   "adj_right", "speed_limit"}, ...],
     "regulatory": [{"kind", "refs", "priority_over", "stop_line"}, ...],
     "intersections": [{"id", "members", "entrances"}, ...]}

For ``right_of_way`` elements the ``refs`` lanelets have priority over the
``priority_over`` lanelets.  For ``yield`` elements the ``refs`` lanelets
must yield to the ``priority_over`` lanelets.  ``stop_line`` elements only
place a stop line on their ``refs``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Polyline

CENTERLINE_SPACING = 0.5
REGULATORY_KINDS = ("right_of_way", "yield", "stop_line")


class MapError(ValueError):
    pass


class MapParseError(MapError):
    pass


class DanglingReferenceError(MapError):
    def __init__(self, ref_id, context: str = ""):
        self.ref_id = ref_id
        super().__init__(f"reference to unknown lanelet id {ref_id}" + (f" ({context})" if context else ""))


class DegenerateGeometryError(MapError):
    pass


class TooFarFromCenterlineError(MapError):
    pass


@dataclass(frozen=True, eq=False)
class Lanelet:
    id: int
    left_bound: np.ndarray
    right_bound: np.ndarray
    centerline: Polyline
    half_width: np.ndarray  # per centerline vertex
    successors: tuple[int, ...] = ()
    adjacent_left: int | None = None
    adjacent_right: int | None = None
    speed_limit: float = 13.89

    @property
    def length(self) -> float:
        return self.centerline.length

    def half_width_at(self, s: float) -> float:
        return float(np.interp(s, self.centerline.s, self.half_width))


@dataclass(frozen=True)
class RegulatoryElement:
    kind: str
    lanelet_refs: tuple[int, ...]
    priority_over: tuple[int, ...] = ()
    stop_line: np.ndarray | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Intersection:
    id: int
    members: tuple[int, ...]
    entrances: tuple[int, ...]


@dataclass
class LaneletMap:
    lanelets: dict[int, Lanelet]
    regulatory: list[RegulatoryElement] = field(default_factory=list)
    intersections: list[Intersection] = field(default_factory=list)

    def __post_init__(self):
        preds: dict[int, list[int]] = {lid: [] for lid in self.lanelets}
        for lid in sorted(self.lanelets):
            for succ in self.lanelets[lid].successors:
                preds[succ].append(lid)
        self._predecessors = {k: tuple(v) for k, v in preds.items()}

    def __getitem__(self, lanelet_id: int) -> Lanelet:
        return self.lanelets[lanelet_id]

    def predecessors(self, lanelet_id: int) -> tuple[int, ...]:
        return self._predecessors[lanelet_id]

    def project_to_centerline(self, lanelet_id: int, point, gate: float = 10.0) -> tuple[float, float]:
        return project_to_centerline(self, lanelet_id, point, gate)

    def yields_to(self, seq_a, seq_b) -> bool:
        """True if a route over ``seq_a`` must give way to one over ``seq_b``."""
        a, b = set(seq_a), set(seq_b)
        for reg in self.regulatory:
            refs, over = set(reg.lanelet_refs), set(reg.priority_over)
            if reg.kind == "yield" and refs & a and over & b:
                return True
            if reg.kind == "right_of_way" and refs & b and over & a:
                return True
        return False

    def stop_lines_for(self, seq) -> list[np.ndarray]:
        ids = set(seq)
        return [reg.stop_line for reg in self.regulatory
                if reg.stop_line is not None and ids & set(reg.lanelet_refs)]


def _resample_bound(points: np.ndarray, n: int) -> np.ndarray:
    return Polyline(points).resample_n(n)


def make_lanelet(lanelet_id, left, right, successors=(), adj_left=None, adj_right=None,
                 speed_limit=13.89, spacing: float = CENTERLINE_SPACING) -> Lanelet:
    left = np.asarray(left, dtype=float).reshape(-1, 2)
    right = np.asarray(right, dtype=float).reshape(-1, 2)
    if len(left) < 2 or len(right) < 2:
        raise DegenerateGeometryError(f"lanelet {lanelet_id}: bounds need at least 2 points")
    try:
        longer = max(Polyline(left).length, Polyline(right).length)
    except ValueError as exc:
        raise DegenerateGeometryError(f"lanelet {lanelet_id}: {exc}") from None
    n = max(2, int(math.ceil(longer / spacing - 1e-9)) + 1)
    left_rs = _resample_bound(left, n)
    right_rs = _resample_bound(right, n)
    mid = 0.5 * (left_rs + right_rs)
    try:
        center = Polyline(mid)
    except ValueError:
        raise DegenerateGeometryError(f"lanelet {lanelet_id}: zero-length centerline") from None
    if len(center) != n:
        # duplicate midpoints were dropped; keep widths aligned with stored vertices
        keep = np.ones(n, dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(mid, axis=0), axis=1) > 1e-12
        left_rs, right_rs = left_rs[keep], right_rs[keep]
    half = 0.5 * np.linalg.norm(left_rs - right_rs, axis=1)
    return Lanelet(
        id=int(lanelet_id), left_bound=left, right_bound=right, centerline=center, half_width=half,
        successors=tuple(int(x) for x in successors),
        adjacent_left=None if adj_left is None else int(adj_left),
        adjacent_right=None if adj_right is None else int(adj_right),
        speed_limit=float(speed_limit),
    )


def map_from_dict(data: dict) -> LaneletMap:
    if not isinstance(data, dict) or "lanelets" not in data:
        raise MapParseError("map JSON must be an object with a 'lanelets' list")
    lanelets: dict[int, Lanelet] = {}
    try:
        for item in data["lanelets"]:
            lid = int(item["id"])
            if lid in lanelets:
                raise MapParseError(f"duplicate lanelet id {lid}")
            lanelets[lid] = make_lanelet(
                lid, item["left"], item["right"], item.get("successors", ()),
                item.get("adj_left"), item.get("adj_right"), item.get("speed_limit", 13.89),
            )
    except (KeyError, TypeError) as exc:
        raise MapParseError(f"malformed lanelet entry: {exc}") from None

    def check(ref, context):
        if ref is not None and int(ref) not in lanelets:
            raise DanglingReferenceError(int(ref), context)

    for lan in lanelets.values():
        for succ in lan.successors:
            check(succ, f"successor of {lan.id}")
        check(lan.adjacent_left, f"adj_left of {lan.id}")
        check(lan.adjacent_right, f"adj_right of {lan.id}")

    regulatory = []
    for item in data.get("regulatory", []):
        kind = item.get("kind")
        if kind not in REGULATORY_KINDS:
            raise MapParseError(f"unknown regulatory kind {kind!r}")
        refs = tuple(int(x) for x in item.get("refs", ()))
        over = tuple(int(x) for x in item.get("priority_over", ()))
        for ref in refs + over:
            check(ref, f"regulatory {kind}")
        stop = item.get("stop_line")
        if stop is not None:
            stop = np.asarray(stop, dtype=float)
            if stop.shape != (2, 2):
                raise MapParseError("stop_line must be a 2-point segment")
        if kind in ("yield", "stop_line") and stop is None:
            raise MapParseError(f"{kind} element requires a stop_line")
        regulatory.append(RegulatoryElement(kind, refs, over, stop))

    intersections = []
    for item in data.get("intersections", []):
        members = tuple(int(x) for x in item.get("members", ()))
        if not members:
            raise MapParseError(f"intersection {item.get('id')} has no members")
        entrances = tuple(int(x) for x in item.get("entrances", ()))
        for ref in members + entrances:
            check(ref, f"intersection {item.get('id')}")
        intersections.append(Intersection(int(item["id"]), members, entrances))
    return LaneletMap(lanelets, regulatory, intersections)


def load_map(path) -> LaneletMap:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MapParseError(f"{path}: {exc}") from None
    return map_from_dict(data)


def map_to_dict(lmap: LaneletMap) -> dict:
    return {
        "lanelets": [
            {
                "id": lan.id,
                "left": np.round(lan.left_bound, 6).tolist(),
                "right": np.round(lan.right_bound, 6).tolist(),
                "successors": list(lan.successors),
                "adj_left": lan.adjacent_left,
                "adj_right": lan.adjacent_right,
                "speed_limit": lan.speed_limit,
            }
            for lan in (lmap.lanelets[k] for k in sorted(lmap.lanelets))
        ],
        "regulatory": [
            {
                "kind": reg.kind,
                "refs": list(reg.lanelet_refs),
                "priority_over": list(reg.priority_over),
                "stop_line": None if reg.stop_line is None else np.round(reg.stop_line, 6).tolist(),
            }
            for reg in lmap.regulatory
        ],
        "intersections": [
            {"id": it.id, "members": list(it.members), "entrances": list(it.entrances)}
            for it in lmap.intersections
        ],
    }


def save_map(lmap: LaneletMap, path) -> None:
    Path(path).write_text(json.dumps(map_to_dict(lmap), indent=1))


def project_to_centerline(lmap: LaneletMap, lanelet_id: int, point, gate: float = 10.0) -> tuple[float, float]:
    """Frenet coordinates ``(s, d)`` of ``point`` on a lanelet centerline."""
    s, d, dist = lmap[lanelet_id].centerline.project(point)
    if dist > gate:
        raise TooFarFromCenterlineError(
            f"point {tuple(np.round(point, 3))} is {dist:.2f} m from lanelet {lanelet_id} (gate {gate} m)")
    return s, d
