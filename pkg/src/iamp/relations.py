"""Interaction structures between vehicles, corridors and intersections.

Three relation kinds are computed from a snapshot of corridors whose
``start_s`` holds each vehicle's current arc-length position:

* lateral relations (leader, bumper-to-bumper gap, leader speed),
* corridor-to-intersection distances along the corridor,
* corridor-to-corridor dependencies (which corridor acts as an obstacle).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .corridors import Corridor, VehicleState
from .geometry import segment_intersections, wrap_angle
from .map_model import LaneletMap

LEADER_LATERAL_GATE = 2.0
ARRIVAL_TIE = 0.2
MIN_SPEED = 0.1


@dataclass(frozen=True)
class LateralRelation:
    target_vehicle_id: int
    leader_vehicle_id: int | None
    d_lead: float
    v_lead: float


@dataclass(frozen=True)
class IntersectionRelation:
    corridor_id: int
    intersection_id: int
    d_int: float
    entrance_id: int
    entry_s: float


@dataclass(frozen=True)
class CorridorDependency:
    dependent_corridor_id: int
    blocking_corridor_id: int
    conflict_s_dependent: float
    conflict_s_blocking: float


@dataclass(frozen=True)
class Conflict:
    s_a: float
    s_b: float
    point: tuple[float, float]
    kind: str  # "crossing" or "merge"


# --------------------------------------------------------------------------
# lateral


def lateral_relations(vehicles: list[VehicleState], corridors: list[Corridor]) -> list[LateralRelation]:
    """Nearest vehicle ahead of each target along any of its corridors."""
    by_vehicle: dict[int, list[Corridor]] = defaultdict(list)
    for c in corridors:
        by_vehicle[c.vehicle_id].append(c)
    states = {v.vehicle_id: v for v in vehicles}
    best: dict[int, tuple[float, int, float]] = {}
    for target in sorted(states.values(), key=lambda v: v.vehicle_id):
        for other in sorted(states.values(), key=lambda v: v.vehicle_id):
            if other.vehicle_id == target.vehicle_id:
                continue
            for c in by_vehicle.get(target.vehicle_id, ()):
                s_o, d_o, _ = c.centerline.project(other.position)
                if abs(d_o) > LEADER_LATERAL_GATE or s_o <= c.start_s:
                    continue
                if c.centerline.longitudinal_overshoot(other.position) > 0.0:
                    continue
                if abs(float(wrap_angle(other.heading - c.centerline.heading_at(s_o)))) > math.pi / 3:
                    continue
                gap = max(0.0, s_o - c.start_s - 0.5 * (target.length + other.length))
                cur = best.get(target.vehicle_id)
                if cur is None or (gap, other.vehicle_id) < (cur[0], cur[1]):
                    best[target.vehicle_id] = (gap, other.vehicle_id, other.v)
    # a pair of vehicles must not lead each other
    for tid, (gap, lid, _) in list(best.items()):
        back = best.get(lid)
        if back is not None and back[1] == tid:
            drop = tid if (gap, tid) > (back[0], lid) else lid
            best.pop(drop, None)
    out = []
    for vid in sorted(states):
        if vid in best:
            gap, lid, v_lead = best[vid]
            out.append(LateralRelation(vid, lid, gap, v_lead))
        else:
            out.append(LateralRelation(vid, None, math.inf, states[vid].v))
    return out


# --------------------------------------------------------------------------
# corridor to intersection


def intersection_relations(lmap: LaneletMap, corridors: list[Corridor]) -> list[IntersectionRelation]:
    out = []
    for c in corridors:
        recs = []
        for inter in lmap.intersections:
            members = set(inter.members)
            idx = [i for i, lid in enumerate(c.lanelet_seq) if lid in members]
            if not idx:
                continue
            i = idx[0]
            entry_s = c.lanelet_offsets[i]
            entrance = c.lanelet_seq[i - 1] if i > 0 else c.lanelet_seq[i]
            recs.append(IntersectionRelation(c.id, inter.id, max(0.0, entry_s - c.start_s), entrance, entry_s))
        recs.sort(key=lambda r: (r.d_int, r.intersection_id))
        out.extend(recs)
    return out


# --------------------------------------------------------------------------
# corridor to corridor


def corridor_conflicts(a: Corridor, b: Corridor, dedupe: float = 0.5) -> list[Conflict]:
    """Centerline crossings plus merge points (start of a shared lanelet reached
    from different predecessors), sorted by arc length on ``a``."""
    pos_b = {lid: j for j, lid in enumerate(b.lanelet_seq)}
    shared = []  # arc-length ranges of lanelets both corridors drive
    for i, lid in enumerate(a.lanelet_seq):
        j = pos_b.get(lid)
        if j is not None:
            length = lanelet_length_on(a, i)
            shared.append((a.lanelet_offsets[i], a.lanelet_offsets[i] + length,
                           b.lanelet_offsets[j], b.lanelet_offsets[j] + length))

    def on_shared(sa, sb):
        tol = 0.5
        return any(a0 - tol <= sa <= a1 + tol and b0 - tol <= sb <= b1 + tol for a0, a1, b0, b1 in shared)

    found = [Conflict(sa, sb, (float(p[0]), float(p[1])), "crossing")
             for sa, sb, p in segment_intersections(a.centerline, b.centerline) if not on_shared(sa, sb)]
    for i, lid in enumerate(a.lanelet_seq):
        j = pos_b.get(lid)
        if j is None:
            continue
        pred_a = a.lanelet_seq[i - 1] if i > 0 else None
        pred_b = b.lanelet_seq[j - 1] if j > 0 else None
        if pred_a == pred_b:
            continue
        sa, sb = a.lanelet_offsets[i], b.lanelet_offsets[j]
        p = a.centerline.point_at(sa)
        found.append(Conflict(float(sa), float(sb), (float(p[0]), float(p[1])), "merge"))
    found.sort(key=lambda c: (c.s_a, c.s_b))
    out: list[Conflict] = []
    for c in found:
        if any(abs(c.s_a - o.s_a) < dedupe and abs(c.s_b - o.s_b) < dedupe for o in out):
            continue
        out.append(c)
    return out


def lanelet_length_on(c: Corridor, i: int) -> float:
    end = c.lanelet_offsets[i + 1] if i + 1 < len(c.lanelet_offsets) else c.length
    return max(0.0, end - c.lanelet_offsets[i])


def upcoming_conflicts(a: Corridor, b: Corridor) -> list[Conflict]:
    return [c for c in corridor_conflicts(a, b) if c.s_a > a.start_s and c.s_b > b.start_s]


def _prefix(c: Corridor, s: float) -> tuple[int, ...]:
    return tuple(lid for lid, off in zip(c.lanelet_seq, c.lanelet_offsets) if off < s - 1e-6) or c.lanelet_seq[:1]


def regulatory_priority(lmap: LaneletMap, a: Corridor, b: Corridor, s_a: float, s_b: float) -> int:
    """+1 if ``a`` has right of way over ``b`` at the conflict, -1 if it must
    yield, 0 if no regulation decides."""
    pa, pb = _prefix(a, s_a), _prefix(b, s_b)
    a_yields = lmap.yields_to(pa, pb)
    b_yields = lmap.yields_to(pb, pa)
    if a_yields == b_yields:
        return 0
    return -1 if a_yields else 1


def arrival_time(c: Corridor, s: float, v: float) -> float:
    return max(0.0, s - c.start_s) / max(v, MIN_SPEED)


def a_depends_on_b(lmap: LaneletMap, a: Corridor, b: Corridor, conflict: Conflict,
                   v_a: float, v_b: float) -> bool:
    """Priority rules deciding which of two conflicting corridors yields.

    1. regulation: the yielding corridor depends on the prioritized one;
    2. otherwise the later arrival (constant speed) depends on the earlier;
    3. arrivals within ``ARRIVAL_TIE`` seconds: the higher vehicle id yields.
    """
    prio = regulatory_priority(lmap, a, b, conflict.s_a, conflict.s_b)
    if prio != 0:
        return prio < 0
    ta = arrival_time(a, conflict.s_a, v_a)
    tb = arrival_time(b, conflict.s_b, v_b)
    if abs(ta - tb) >= ARRIVAL_TIE:
        return ta > tb
    return a.vehicle_id > b.vehicle_id


def corridor_dependencies(corridors: list[Corridor], vehicles: list[VehicleState],
                          lmap: LaneletMap) -> list[CorridorDependency]:
    """At most one blocking corridor per dependent corridor, acyclic overall."""
    speed = {v.vehicle_id: v.v for v in vehicles}
    ordered = sorted(corridors, key=lambda c: c.id)
    candidates: dict[int, list[tuple[float, int, CorridorDependency]]] = defaultdict(list)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            if a.vehicle_id == b.vehicle_id:
                continue
            conflicts = upcoming_conflicts(a, b)
            if not conflicts:
                continue
            first = min(conflicts, key=lambda c: (c.s_a - a.start_s) + (c.s_b - b.start_s))
            if a_depends_on_b(lmap, a, b, first, speed.get(a.vehicle_id, 0.0), speed.get(b.vehicle_id, 0.0)):
                dep = CorridorDependency(a.id, b.id, first.s_a, first.s_b)
                candidates[a.id].append((first.s_a - a.start_s, b.id, dep))
            else:
                dep = CorridorDependency(b.id, a.id, first.s_b, first.s_a)
                candidates[b.id].append((first.s_b - b.start_s, a.id, dep))
    chosen = {cid: min(cands, key=lambda t: (t[0], t[1]))[2] for cid, cands in candidates.items()}
    by_id = {c.id: c for c in corridors}
    _break_cycles(chosen, by_id, speed)
    return [chosen[k] for k in sorted(chosen)]


def _break_cycles(chosen: dict[int, CorridorDependency], by_id: dict[int, Corridor], speed) -> None:
    while True:
        cycle = _find_cycle(chosen)
        if cycle is None:
            return

        def arrival(cid):
            dep = chosen[cid]
            c = by_id[cid]
            return arrival_time(c, dep.conflict_s_dependent, speed.get(c.vehicle_id, 0.0)), cid

        del chosen[min(cycle, key=arrival)]


def _find_cycle(chosen: dict[int, CorridorDependency]) -> list[int] | None:
    state: dict[int, int] = {}
    for start in sorted(chosen):
        path = []
        node = start
        while node in chosen and node not in state:
            state[node] = 1
            path.append(node)
            node = chosen[node].blocking_corridor_id
        if node in path:
            return path[path.index(node):]
        for n in path:
            state[n] = 2
    return None


def dependency_order(corridor_ids, dependencies: list[CorridorDependency]) -> list[int]:
    """Corridor ids ordered so that every blocking corridor precedes its dependents."""
    blocking = {d.dependent_corridor_id: d.blocking_corridor_id for d in dependencies}
    done: list[int] = []
    seen: set[int] = set()

    def visit(cid):
        if cid in seen:
            return
        seen.add(cid)
        if cid in blocking:
            visit(blocking[cid])
        done.append(cid)

    for cid in sorted(corridor_ids):
        visit(cid)
    return [cid for cid in done if cid in set(corridor_ids)]


# --------------------------------------------------------------------------
# vehicles influencing a corridor at its next intersection


@dataclass(frozen=True)
class Influencer:
    vehicle_id: int
    time_to_conflict: float
    d_int: float
    v: float
    priority: int  # of the target with respect to this vehicle: +1 target has priority


def intersection_influencers(lmap: LaneletMap, target: Corridor, corridors: list[Corridor],
                             vehicles: list[VehicleState], k: int = 2) -> list[Influencer]:
    """The ``k`` other vehicles with the smallest time to a conflict with
    ``target`` inside the target's next intersection."""
    rels = intersection_relations(lmap, [target])
    if not rels:
        return []
    inter_id = rels[0].intersection_id
    members = set(next(i for i in lmap.intersections if i.id == inter_id).members)
    states = {v.vehicle_id: v for v in vehicles}
    best: dict[int, Influencer] = {}
    for c in corridors:
        if c.vehicle_id == target.vehicle_id or c.vehicle_id not in states:
            continue
        if not members & set(c.lanelet_seq):
            continue
        veh = states[c.vehicle_id]
        for conf in upcoming_conflicts(target, c):
            if target.lanelet_at(conf.s_a) not in members and c.lanelet_at(conf.s_b) not in members:
                continue
            ttc = arrival_time(c, conf.s_b, veh.v)
            d_int = next((r.d_int for r in intersection_relations(lmap, [c]) if r.intersection_id == inter_id), 0.0)
            prio = regulatory_priority(lmap, target, c, conf.s_a, conf.s_b)
            cand = Influencer(c.vehicle_id, ttc, d_int, veh.v, prio)
            cur = best.get(c.vehicle_id)
            if cur is None or ttc < cur.time_to_conflict:
                best[c.vehicle_id] = cand
            break
    return sorted(best.values(), key=lambda i: (i.time_to_conflict, i.vehicle_id))[:k]
