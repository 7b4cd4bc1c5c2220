"""Synthetic maps and kinematically consistent traffic for desk-scale runs.

Every scenario is a deterministic function of ``(name, seed)``.  Vehicles
follow fixed lanelet routes under a car-following model with curve-speed
limits and gap-acceptance yielding at conflicts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corridors import Corridor, build_corridor
from .geometry import arc_points, offset_polyline
from .map_model import LaneletMap, map_from_dict
from .relations import corridor_conflicts, regulatory_priority
from .tracks import DT, Recording, Track, TrackDataset

SCENARIOS = ("straight", "fork", "four_arm", "t_junction", "roundabout", "queue")
LANE_WIDTH = 3.5
SPEED_LIMIT = 13.89


class UnknownScenarioError(ValueError):
    pass


# --------------------------------------------------------------------------
# map construction helpers


def _lane(lid, center, successors=(), speed_limit=SPEED_LIMIT, adj_left=None, adj_right=None) -> dict:
    center = np.asarray(center, dtype=float)
    return {
        "id": lid,
        "left": offset_polyline(center, LANE_WIDTH / 2).tolist(),
        "right": offset_polyline(center, -LANE_WIDTH / 2).tolist(),
        "successors": list(successors),
        "adj_left": adj_left,
        "adj_right": adj_right,
        "speed_limit": speed_limit,
    }


def _line(p0, p1, step=0.5) -> np.ndarray:
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / step)) + 1)
    return p0 + np.linspace(0, 1, n)[:, None] * (p1 - p0)


def _bezier(p0, p1, p2, p3, n=60) -> np.ndarray:
    t = np.linspace(0, 1, n)[:, None]
    return ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t ** 2 * p2 + t ** 3 * p3


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _stop_line(center: np.ndarray, s_back: float = 1.0) -> list:
    """Segment across the lane ``s_back`` metres before the end of ``center``."""
    seg = np.diff(center, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    target = cum[-1] - s_back
    i = int(np.clip(np.searchsorted(cum, target) - 1, 0, len(seg) - 1))
    d = seg[i] / lens[i]
    p = center[i] + (target - cum[i]) * d
    n = np.array([-d[1], d[0]])
    return [(p + n * LANE_WIDTH / 2).tolist(), (p - n * LANE_WIDTH / 2).tolist()]


def crossing_map(arms=(0, 1, 2, 3), priority_arms=(0, 2), box=7.0, arm_length=80.0) -> LaneletMap:
    """Single-lane crossing; arm ``k`` points along angle ``-90 + 90k`` degrees.

    Approach lanelets are ``10+k``, exits ``20+k`` and internal lanelets
    ``100 + 10k + {0: right, 1: straight, 2: left}``.
    """
    h = LANE_WIDTH / 2
    lanes = []
    internal = {}
    for k in arms:
        rot = _rot(k * math.pi / 2)
        approach = _line((h, -box - arm_length), (h, -box)) @ rot.T
        exit_ = _line((-h, -box), (-h, -box - arm_length)) @ rot.T
        turns = {}
        # right turn to arm k+1, straight to k+2, left to k+3
        turns[(k + 1) % 4] = (0, arc_points((box, -box), box - h, math.pi, math.pi / 2, 0.1))
        turns[(k + 2) % 4] = (1, _line((h, -box), (h, box), 0.25))
        turns[(k + 3) % 4] = (2, arc_points((-box, -box), box + h, 0.0, math.pi / 2, 0.1))
        succ = []
        for target, (kind, pts) in turns.items():
            if target not in arms:
                continue
            lid = 100 + 10 * k + kind
            internal[lid] = (k, target)
            lanes.append(_lane(lid, pts @ rot.T, successors=[20 + target]))
            succ.append(lid)
        lanes.append(_lane(10 + k, approach, successors=sorted(succ)))
        lanes.append(_lane(20 + k, exit_))
    prio_set = [10 + k for k in priority_arms] + [lid for lid, (k, _) in internal.items() if k in priority_arms]
    minor = [k for k in arms if k not in priority_arms]
    minor_set = [10 + k for k in minor] + [lid for lid, (k, _) in internal.items() if k in minor]
    regulatory = []
    if minor and priority_arms:
        regulatory.append({"kind": "right_of_way", "refs": sorted(prio_set), "priority_over": sorted(minor_set),
                           "stop_line": None})
        for k in minor:
            approach = np.array(next(l for l in lanes if l["id"] == 10 + k)["left"])
            center = 0.5 * (approach + np.array(next(l for l in lanes if l["id"] == 10 + k)["right"]))
            regulatory.append({"kind": "yield", "refs": [10 + k], "priority_over": sorted(prio_set),
                               "stop_line": _stop_line(center)})
    data = {
        "lanelets": lanes,
        "regulatory": regulatory,
        "intersections": [{"id": 1, "members": sorted(internal), "entrances": sorted(10 + k for k in arms)}],
    }
    return map_from_dict(data)


def roundabout_map(radius=15.0, arm_angles_deg=(270.0, 30.0, 150.0), arm_length=90.0, offset_deg=30.0) -> LaneletMap:
    """Single-lane roundabout, counter-clockwise circulation.

    Ring lanelets are ``200+i``, entries ``210+k`` and exits ``220+k``.
    """
    nodes = []  # (angle, kind, arm)
    for k, phi in enumerate(arm_angles_deg):
        nodes.append(((phi - offset_deg) % 360.0, "exit", k))
        nodes.append(((phi + offset_deg) % 360.0, "entry", k))
    nodes.sort()
    n = len(nodes)
    lanes = []
    ring_after = {}
    ring_ids = []
    for i, (ang, kind, k) in enumerate(nodes):
        a0 = math.radians(ang)
        a1 = math.radians(nodes[(i + 1) % n][0])
        if a1 <= a0:
            a1 += 2 * math.pi
        lid = 200 + i
        ring_ids.append(lid)
        succ = [200 + (i + 1) % n]
        nxt_kind, nxt_arm = nodes[(i + 1) % n][1], nodes[(i + 1) % n][2]
        if nxt_kind == "exit":
            succ.append(220 + nxt_arm)
        lanes.append(_lane(lid, arc_points((0.0, 0.0), radius, a0, a1, 0.1), successors=succ))
        ring_after[(kind, k)] = lid
    regulatory = []
    for k, phi in enumerate(arm_angles_deg):
        u = np.array([math.cos(math.radians(phi)), math.sin(math.radians(phi))])
        rn_in = np.array([-u[1], u[0]])  # right of inbound travel
        rn_out = -rn_in
        a_in = math.radians(phi + offset_deg)
        a_out = math.radians(phi - offset_deg)
        e = radius * np.array([math.cos(a_in), math.sin(a_in)])
        te = np.array([-math.sin(a_in), math.cos(a_in)])
        p0 = (radius + arm_length) * u + 2.0 * rn_in
        p1 = (radius + 25.0) * u + 2.0 * rn_in
        span = np.linalg.norm(p1 - e)
        entry = np.vstack([_line(p0, p1)[:-1], _bezier(p1, p1 - u * 0.5 * span, e - te * 0.35 * span, e, 120)])
        x = radius * np.array([math.cos(a_out), math.sin(a_out)])
        tx = np.array([-math.sin(a_out), math.cos(a_out)])
        q1 = (radius + 12.0) * u + 2.0 * rn_out
        q2 = (radius + arm_length) * u + 2.0 * rn_out
        span = np.linalg.norm(q1 - x) / 3
        exit_ = np.vstack([_bezier(x, x + tx * span, q1 - u * span, q1, 80)[:-1], _line(q1, q2)])
        lanes.append(_lane(210 + k, entry, successors=[ring_after[("entry", k)]]))
        lanes.append(_lane(220 + k, exit_))
        regulatory.append({"kind": "yield", "refs": [210 + k], "priority_over": sorted(ring_ids),
                           "stop_line": _stop_line(entry, 2.0)})
    data = {
        "lanelets": lanes,
        "regulatory": regulatory,
        "intersections": [{"id": 1, "members": sorted(ring_ids),
                           "entrances": [210 + k for k in range(len(arm_angles_deg))]}],
    }
    return map_from_dict(data)


def straight_map(n_lanelets=3, lanelet_length=50.0) -> LaneletMap:
    lanes = []
    for i in range(n_lanelets):
        succ = [i + 2] if i + 1 < n_lanelets else []
        lanes.append(_lane(i + 1, _line((i * lanelet_length, 0.0), ((i + 1) * lanelet_length, 0.0)), succ))
    return map_from_dict({"lanelets": lanes})


def fork_map(stem=60.0, branch=60.0, radius=30.0) -> LaneletMap:
    """Lanelet 1 splits into 2 (straight on) and 3 (right curve then straight)."""
    curve = arc_points((stem, -radius), radius, math.pi / 2, 0.0, 0.1)
    tail = _line(curve[-1], curve[-1] + np.array([0.0, -branch + radius * math.pi / 2]))
    lanes = [
        _lane(1, _line((0.0, 0.0), (stem, 0.0)), [2, 3]),
        _lane(2, _line((stem, 0.0), (stem + branch, 0.0))),
        _lane(3, np.vstack([curve[:-1], tail])),
    ]
    return map_from_dict({"lanelets": lanes})


# --------------------------------------------------------------------------
# traffic simulation


@dataclass
class VehicleSpec:
    vehicle_id: int
    route: tuple[int, ...]
    s0: float
    v0: float
    v_des: float
    t_enter: float = 0.0
    a_lat: float = 2.5
    a_comf: float = 1.5
    b_comf: float = 2.0
    headway: float = 1.3
    length: float = 4.5
    width: float = 1.8
    script: list = field(default_factory=list)  # (t0, t1, accel) overrides


@dataclass
class _Agent:
    spec: VehicleSpec
    path: Corridor
    s: float
    v: float
    pos: np.ndarray
    active: bool = False
    done: bool = False
    log: list = field(default_factory=list)
    yields: dict = field(default_factory=dict)  # other id -> (s_self, s_other, must_yield)


def _curve_speed(agent: _Agent, lookahead=60.0) -> float:
    sp = agent.spec
    s = np.linspace(agent.s, agent.s + lookahead, 61)
    k = np.abs(agent.path.curvature_at(s))
    v_lim = np.minimum(np.sqrt(sp.a_lat / np.maximum(k, 1e-4)), agent.path.speed_limit_at(s))
    allowed = np.sqrt(v_lim ** 2 + 2 * sp.b_comf * (s - agent.s))
    return float(min(sp.v_des, allowed.min()))


def _idm_follow(agent: _Agent, gap: float, v_other: float) -> float:
    sp = agent.spec
    s_star = 2.0 + agent.v * sp.headway + agent.v * (agent.v - v_other) / (2 * math.sqrt(sp.a_comf * sp.b_comf))
    return -sp.a_comf * (max(s_star, 0.0) / max(gap, 0.1)) ** 2


def simulate(lmap: LaneletMap, specs: list[VehicleSpec], duration: float, recording_id: int = 0) -> Recording:
    agents = []
    for sp in specs:
        path = build_corridor(lmap, sp.vehicle_id, sp.vehicle_id, sp.route, sp.route, 0.0)
        agents.append(_Agent(sp, path, sp.s0, sp.v0, path.centerline.point_at(sp.s0).copy()))
    # route-level conflicts and static priorities
    conflicts = {}
    for a in agents:
        for b in agents:
            if a is b:
                continue
            found = [c for c in corridor_conflicts(a.path, b.path) if c.s_a > a.spec.s0 and c.s_b > b.spec.s0]
            if found:
                c = found[0]
                conflicts[(a.spec.vehicle_id, b.spec.vehicle_id)] = (
                    c.s_a, c.s_b, regulatory_priority(lmap, a.path, b.path, c.s_a, c.s_b))
    stop_arcs = {}
    for a in agents:
        arcs = []
        for line in lmap.stop_lines_for(a.spec.route):
            from .geometry import Polyline, segment_intersections
            hits = segment_intersections(a.path.centerline, Polyline(line))
            arcs.extend(h[0] for h in hits)
        stop_arcs[a.spec.vehicle_id] = sorted(arcs)
    by_id = {a.spec.vehicle_id: a for a in agents}
    n_steps = int(round(duration / DT))
    for step in range(n_steps + 1):
        t = round(step * DT, 10)
        for a in agents:
            if not a.active and not a.done and t >= a.spec.t_enter - 1e-9:
                a.active = True
        live = [a for a in agents if a.active]
        accels = {}
        for a in live:
            accels[a.spec.vehicle_id] = _decide(a, live, by_id, conflicts, stop_arcs, t)
        for a in live:
            acc = accels[a.spec.vehicle_id]
            v_next = max(0.0, a.v + acc * DT)
            target = a.path.centerline.point_at(a.s + max(a.v, 0.0) * DT)
            delta = target - a.pos
            if a.v > 1e-9 and np.linalg.norm(delta) > 1e-9:
                heading = math.atan2(delta[1], delta[0])
            else:
                heading = float(a.path.centerline.heading_at(a.s))
            a.log.append((t, a.pos[0], a.pos[1], heading, a.v, (v_next - a.v) / DT))
            a.pos = a.pos + a.v * DT * np.array([math.cos(heading), math.sin(heading)])
            a.s += a.v * DT
            a.v = v_next
            if a.s > a.path.length - 1.0:
                a.active = False
                a.done = True
    tracks = {}
    for a in agents:
        if len(a.log) < 2:
            continue
        arr = np.array(a.log)
        tracks[a.spec.vehicle_id] = Track(a.spec.vehicle_id, np.round(arr[:, 0], 10), arr[:, 1], arr[:, 2],
                                          np.unwrap(arr[:, 3]), arr[:, 4], arr[:, 5], a.spec.length, a.spec.width)
    meta = {"routes": {str(a.spec.vehicle_id): list(a.spec.route) for a in agents}}
    return Recording(recording_id, 1.0 / DT, tracks, meta)


def _decide(a: _Agent, live, by_id, conflicts, stop_arcs, t) -> float:
    sp = a.spec
    for t0, t1, acc in sp.script:
        if t0 <= t < t1:
            return acc
    v_target = _curve_speed(a)
    if v_target > 1e-3:
        acc = sp.a_comf * (1 - (a.v / v_target) ** 4)
    else:
        acc = -sp.b_comf
    # car following along the own path
    lead_gap, lead_v = math.inf, 0.0
    for o in live:
        if o is a:
            continue
        s_o, d_o, _ = a.path.centerline.project(o.pos)
        if abs(d_o) > 1.5 or s_o <= a.s or a.path.centerline.longitudinal_overshoot(o.pos) > 0:
            continue
        gap = s_o - a.s - 0.5 * (sp.length + o.spec.length)
        if gap < lead_gap:
            lead_gap, lead_v = gap, o.v
    if lead_gap < math.inf:
        acc = min(acc, sp.a_comf * (1 - (a.v / max(v_target, 0.1)) ** 4) + _idm_follow(a, lead_gap, lead_v))
    # gap acceptance at conflicts
    for o in live:
        key = (sp.vehicle_id, o.spec.vehicle_id)
        if o is a or key not in conflicts:
            continue
        s_c, s_oc, prio = conflicts[key]
        clear = 0.5 * (sp.length + o.spec.length) + 1.5
        if a.s > s_c - 0.5 * sp.length or o.s > s_oc + clear:
            continue
        if prio == 0:
            if key not in a.yields:
                if s_c - a.s > 40.0:
                    continue
                t_me = (s_c - a.s) / max(a.v, 1.0)
                t_o = (s_oc - o.s) / max(o.v, 1.0)
                a.yields[key] = t_o < t_me or (abs(t_o - t_me) < 0.2 and o.spec.vehicle_id < sp.vehicle_id)
            must = a.yields[key]
        else:
            must = prio < 0
        if not must:
            continue
        stop_s = s_c - 6.0
        arcs = [x for x in stop_arcs[sp.vehicle_id] if x < s_c]
        if arcs:
            stop_s = min(stop_s, arcs[-1])
        if a.s > stop_s - 0.5 and a.v > 0.5:
            continue  # already committed
        t_o = (s_oc - clear - o.s) / max(o.v, 0.5)
        t_me_clear = (s_c + clear - a.s) / max(a.v, 2.0) + 1.0
        if o.s < s_oc - clear and t_o > t_me_clear:
            continue  # gap large enough
        gap = stop_s - a.s - 0.5 * sp.length
        if a.v ** 2 / (2 * 4.0) > gap + 0.5 and gap < 0:
            continue
        acc = min(acc, sp.a_comf * (1 - (a.v / max(v_target, 0.1)) ** 4) + _idm_follow(a, max(gap, 0.1), 0.0))
    return float(np.clip(acc, -3.0, 2.0))


# --------------------------------------------------------------------------
# named scenarios


def _free_arrival(lmap, spec: VehicleSpec, s_conflict: float, other_route=None) -> float:
    """Time at which ``spec`` driving alone reaches ``s_conflict``.

    With ``other_route`` the conflict is the start of the first lanelet the
    two routes share, measured on ``spec``'s own route.
    """
    path = build_corridor(lmap, 0, 0, spec.route, spec.route, 0.0)
    if other_route is not None:
        shared = next(lid for lid in spec.route if lid in set(other_route))
        s_conflict = path.lanelet_start(shared)
    rec = simulate(lmap, [spec], 40.0)
    tr = rec.tracks[spec.vehicle_id]
    s = spec.s0 + tr.travelled()
    i = int(np.searchsorted(s, s_conflict))
    return float(tr.t[min(i, len(tr.t) - 1)])


def _crossing_specs(rng, lmap, arms, priority_arms, n_extra=1):
    specs = []
    vid = 1
    for k in arms:
        options = [lid for lid in lmap[10 + k].successors]
        internal = int(rng.choice(options))
        exit_ = lmap[internal].successors[0]
        v_des = rng.uniform(9.0, 12.5)
        specs.append(VehicleSpec(vid, (10 + k, internal, exit_), s0=rng.uniform(8.0, 25.0),
                                 v0=v_des * rng.uniform(0.8, 1.0), v_des=v_des,
                                 a_lat=rng.uniform(1.8, 3.0), a_comf=rng.uniform(1.2, 2.0),
                                 b_comf=rng.uniform(1.5, 2.5), headway=rng.uniform(1.0, 1.6)))
        vid += 1
    for _ in range(n_extra):
        k = int(rng.choice(priority_arms))
        internal = int(rng.choice(lmap[10 + k].successors))
        v_des = rng.uniform(9.0, 12.5)
        specs.append(VehicleSpec(vid, (10 + k, internal, lmap[internal].successors[0]), s0=2.0,
                                 v0=v_des * 0.9, v_des=v_des, t_enter=round(rng.uniform(1.5, 3.0), 1),
                                 a_lat=rng.uniform(1.8, 3.0), a_comf=rng.uniform(1.2, 2.0),
                                 b_comf=rng.uniform(1.5, 2.5), headway=rng.uniform(1.0, 1.6)))
        vid += 1
    return specs


def generate_scenario(name: str, seed: int = 0) -> tuple[LaneletMap, TrackDataset]:
    """Deterministic synthetic map and tracks for a named situation."""
    if name not in SCENARIOS:
        raise UnknownScenarioError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    rng = np.random.default_rng([seed, SCENARIOS.index(name)])
    if name == "straight":
        lmap = straight_map()
        specs = [VehicleSpec(1, (1, 2, 3), s0=5.0, v0=10.0, v_des=10.0)]
        duration = 12.0
    elif name == "queue":
        lmap = straight_map(4)
        lead_v = rng.uniform(9.0, 11.0)
        brake_t = rng.uniform(5.0, 6.0)
        specs = [
            VehicleSpec(1, (1, 2, 3, 4), s0=60.0, v0=lead_v, v_des=lead_v,
                        script=[(brake_t, brake_t + 2.5, -2.5), (brake_t + 2.5, brake_t + 4.5, 0.0)]),
            VehicleSpec(2, (1, 2, 3, 4), s0=40.0, v0=lead_v, v_des=12.0),
            VehicleSpec(3, (1, 2, 3, 4), s0=20.0, v0=lead_v, v_des=12.0),
        ]
        duration = 14.0
    elif name == "fork":
        lmap = fork_map()
        branch = 2 + seed % 2
        specs = [VehicleSpec(1, (1, branch), s0=5.0, v0=10.0, v_des=10.0, a_lat=3.0)]
        duration = 9.0
    elif name == "four_arm":
        lmap = crossing_map()
        specs = _crossing_specs(rng, lmap, (0, 1, 2, 3), (0, 2))
        duration = 16.0
    elif name == "t_junction":
        lmap = crossing_map(arms=(0, 1, 3), priority_arms=(1, 3))
        specs = _crossing_specs(rng, lmap, (0, 1, 3), (1, 3))
        duration = 16.0
    else:  # roundabout
        lmap = roundabout_map()
        ring_from_arm2 = lmap[212].successors[0]
        route1 = [212]
        cur = ring_from_arm2
        while True:
            route1.append(cur)
            succ = lmap[cur].successors
            if 221 in succ:
                route1.append(221)
                break
            cur = next(x for x in succ if x < 210)
        v1 = rng.uniform(8.0, 10.0)
        spec1 = VehicleSpec(1, tuple(route1), s0=rng.uniform(55.0, 65.0), v0=v1, v_des=v1,
                            a_lat=rng.uniform(2.0, 2.8))
        ring0 = lmap[210].successors[0]
        route2 = [210, ring0]
        cur = ring0
        while 221 not in lmap[cur].successors:
            cur = next(x for x in lmap[cur].successors if x < 210)
            route2.append(cur)
        route2.append(221)
        v2 = rng.uniform(8.0, 10.0)
        spec2 = VehicleSpec(2, tuple(route2), s0=0.0, v0=v2, v_des=v2, a_lat=rng.uniform(2.0, 2.8))
        # place the entering vehicle so that, unimpeded, it would reach the
        # merge shortly after the circulating one: it has to give way
        t1 = _free_arrival(lmap, spec1, lmap[210].length + 0.0, other_route=route2)
        t2 = _free_arrival(lmap, spec2, lmap[210].length)
        spec2.s0 = float(np.clip(v2 * (t2 - t1 - rng.uniform(0.3, 1.2)), 0.0, 60.0))
        specs = [spec1, spec2]
        duration = 20.0
    rec = simulate(lmap, specs, duration, recording_id=seed)
    rec.meta["scenario"] = name
    rec.meta["seed"] = seed
    return lmap, TrackDataset([rec])
