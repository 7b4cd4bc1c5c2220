"""End-to-end prediction runs over recorded or synthetic traffic.

Every 0.1 s the per-vehicle particle filters take a measurement.  Every
0.4 s corridors and relations are rebuilt, and every vehicle with 4 s of
history and 4 s of ground truth ahead is scored: each corridor's Markov
chain is propagated for 10 steps, the expected positions are compared with
the recorded ones and the minimum over corridors is kept.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .accel_ar import (HORIZON_SAMPLES, ARModel, OtherVehicle, extract_features, history_times, infer,
                       profile_to_distributions)
from .corridors import Corridor, NoMatchingLaneletError, VehicleState, enumerate_corridors
from .fusion import ade_fde, expected_position, min_over_corridors, render_grid
from .geometry import Polyline, segment_intersections
from .intention import FilterConfig, GapContext, IntentionFilter, Measurement
from .map_model import LaneletMap
from .markov import (Discretization, TransitionMatrices, build_gamma, build_gamma_hybrid,
                     conflict_half_window, curve_speed_profile, default_psi, initial_distribution,
                     interaction_lambda, interaction_matrix, layout_lambda, propagate, s_marginal)
from .relations import (CorridorDependency, arrival_time, corridor_dependencies, dependency_order,
                        intersection_influencers, intersection_relations, lateral_relations,
                        regulatory_priority, upcoming_conflicts)
from .tracks import DT, Recording, Track, TrackDataset

MODES = ("baseline", "hybrid")
TICK = 4  # measurement steps per evaluation step (0.4 s)
EPS_T = 1e-6


class ConfigError(ValueError):
    pass


class PredictionError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictConfig:
    mode: str = "baseline"
    seed: int = 0
    repeats: int = 3
    horizon_steps: int = 10
    history: float = 4.0
    n_particles: int = 200
    lane_changes: bool = True
    joint_min: bool = False
    psi_self: float = 0.8
    a_lat: float = 2.0
    t_gap: float = 3.0
    yield_threshold: float = 0.1
    collect_grids: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.repeats)]


# --------------------------------------------------------------------------
# scene snapshots


def state_at(track: Track, t: float) -> VehicleState:
    i = track.index(t)
    return VehicleState(track.track_id, float(track.x[i]), float(track.y[i]), float(track.heading[i]),
                        float(track.v[i]), float(track.a[i]), track.length, track.width)


def measurement_at(track: Track, t: float) -> Measurement:
    i = track.index(t)
    return Measurement(float(track.x[i]), float(track.y[i]), float(track.heading[i]),
                       max(0.0, float(track.v[i])), float(track.t[i]))


@dataclass
class Scene:
    t: float
    states: dict[int, VehicleState]
    corridors: dict[int, list[Corridor]]
    _conflicts: dict = field(default_factory=dict, repr=False)

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted(self.states)

    def all_corridors(self) -> list[Corridor]:
        return [c for vid in self.vehicle_ids for c in self.corridors[vid]]

    def conflicts(self, a: Corridor, b: Corridor):
        key = (a.id, b.id)
        if key not in self._conflicts:
            self._conflicts[key] = upcoming_conflicts(a, b)
        return self._conflicts[key]


def build_scene(lmap: LaneletMap, rec: Recording, t: float, lane_changes: bool = True) -> Scene:
    states, corridors = {}, {}
    for vid in sorted(rec.tracks):
        tr = rec.tracks[vid]
        if not tr.covers(t):
            continue
        st = state_at(tr, t)
        try:
            cs = enumerate_corridors(lmap, (st.x, st.y, st.heading), max(st.v, 0.0), vehicle_id=vid,
                                     first_id=vid * 100, lane_changes=lane_changes)
        except NoMatchingLaneletError:
            continue
        states[vid] = st
        corridors[vid] = cs
    return Scene(t, states, corridors)


def gap_contexts(lmap: LaneletMap, scene: Scene, vid: int, horizon: float = 60.0) -> dict[int, GapContext]:
    """Per corridor of ``vid``: the nearest conflict with another vehicle."""
    out = {}
    me = scene.states[vid]
    for ci, c in enumerate(scene.corridors[vid]):
        best = None
        for other in scene.vehicle_ids:
            if other == vid:
                continue
            v_o = scene.states[other].v
            for c2 in scene.corridors[other]:
                found = scene.conflicts(c, c2)
                if not found or found[0].s_a - c.start_s > horizon:
                    continue
                conf = found[0]
                t_o = arrival_time(c2, conf.s_b, v_o)
                if best is None or t_o < best[0]:
                    best = (t_o, conf, c2)
        if best is None:
            continue
        t_o, conf, c2 = best
        stop_s = conf.s_a - conflict_half_window(me.length)
        for line in lmap.stop_lines_for(c.lanelet_seq):
            for s_a, _, _ in segment_intersections(c.centerline, Polyline(line)):
                if c.start_s < s_a < conf.s_a:
                    stop_s = min(stop_s, s_a)
        inter = None
        for rel in intersection_relations(lmap, [c]):
            inter = rel.intersection_id
            break
        prio = regulatory_priority(lmap, c, c2, conf.s_a, conf.s_b)
        out[ci] = GapContext(stop_s, conf.s_a, t_o, prio, inter, scene.t)
    return out


# --------------------------------------------------------------------------
# features from recorded history


def _travelled_at(track: Track, times: np.ndarray, t_now: float) -> np.ndarray:
    trav = track.travelled()
    tt = np.clip(times, track.t_start, track.t_end)
    return np.interp(tt, track.t, trav) - np.interp(t_now, track.t, trav)


def _history(track: Track, times: np.ndarray):
    tt = np.clip(times, track.t_start, track.t_end)
    smp = track.sample(tt)
    return smp["a"], smp["v"]


def corridor_features(lmap: LaneletMap, rec: Recording, scene: Scene, vid: int, corridor: Corridor,
                      leaders=None) -> np.ndarray:
    t = scene.t
    times = history_times(t)
    track = rec.tracks[vid]
    accel, speed = _history(track, times)
    travelled = _travelled_at(track, times, t)
    if leaders is None:
        leaders = {r.target_vehicle_id: r for r in lateral_relations(list(scene.states.values()),
                                                                      scene.all_corridors())}
    leader = None
    rel = leaders.get(vid)
    if rel is not None and rel.leader_vehicle_id is not None and rel.leader_vehicle_id in rec.tracks:
        lt = rec.tracks[rel.leader_vehicle_id]
        leader = OtherVehicle(rel.d_lead, _travelled_at(lt, times, t), _history(lt, times)[1])
    d_int = None
    for r in intersection_relations(lmap, [corridor]):
        d_int = r.d_int
        break
    infl = []
    for inf in intersection_influencers(lmap, corridor, scene.all_corridors(), list(scene.states.values())):
        ot = rec.tracks[inf.vehicle_id]
        infl.append(OtherVehicle(inf.d_int, _travelled_at(ot, times, t), _history(ot, times)[1], inf.priority))
    return extract_features(accel, speed, travelled, corridor, d_int, leader, tuple(infl))


def true_corridor(corridors: list[Corridor], track: Track, t: float, horizon: float = 4.0) -> Corridor:
    """Corridor whose centreline best follows the recorded future positions."""
    times = np.arange(1, int(round(horizon / 0.4)) + 1) * 0.4 + t
    times = times[times <= track.t_end + EPS_T]
    smp = track.sample(times)
    pts = np.column_stack([smp["x"], smp["y"]])

    def cost(c):
        return sum(c.centerline.project(p)[2] for p in pts)

    return min(corridors, key=lambda c: (cost(c), c.id))


def build_training_set(lmap: LaneletMap, dataset: TrackDataset, stride: float = 0.4,
                       history: float = 4.0, lane_changes: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Feature/target pairs at every ``stride`` where 4 s of history and of
    future acceleration exist; features use the best-matching corridor."""
    X, Y = [], []
    horizon = HORIZON_SAMPLES * DT
    for rec in dataset.recordings:
        t0 = rec.t_start
        n = int(round((rec.t_end - t0) / stride))
        leaders_cache = {}
        for k in range(n + 1):
            t = round(t0 + k * stride, 10)
            scene = None
            for vid in sorted(rec.tracks):
                tr = rec.tracks[vid]
                if t - tr.t_start < history - EPS_T or tr.t_end < t + horizon - DT - EPS_T:
                    continue
                if scene is None:
                    scene = build_scene(lmap, rec, t, lane_changes)
                    leaders_cache = {r.target_vehicle_id: r for r in lateral_relations(
                        list(scene.states.values()), scene.all_corridors())}
                if vid not in scene.states:
                    continue
                c = true_corridor(scene.corridors[vid], tr, t)
                X.append(corridor_features(lmap, rec, scene, vid, c, leaders_cache))
                i = tr.index(t)
                Y.append(tr.a[i:i + HORIZON_SAMPLES])
    if not X:
        return np.zeros((0, 220)), np.zeros((0, HORIZON_SAMPLES))
    return np.array(X), np.array(Y)


# --------------------------------------------------------------------------
# Markov prediction for one evaluation time


@dataclass
class ChainResult:
    corridor: Corridor
    dists: list[np.ndarray]      # p(t_0) .. p(t_K)
    intervals: list[np.ndarray]  # occupancy over step k, k = 0..K-1

    @property
    def origin(self) -> float:
        return self.corridor.start_s


def _speed_caps(corridor: Corridor, disc: Discretization, a_lat: float) -> np.ndarray:
    s = corridor.curvature_s
    prof = curve_speed_profile(s, corridor.curvature_profile, corridor.speed_limit_at(s), a_lat=a_lat)
    centres = corridor.start_s + np.arange(disc.n_s) * disc.ds
    return np.interp(centres, s, prof)


def _chain_coord(corridor: Corridor, s: float, disc: Discretization) -> float:
    """Arc length on the corridor expressed in chain coordinates (cell 0
    spans ``[0, ds)`` and is centred on the vehicle)."""
    return s - corridor.start_s + 0.5 * disc.ds


def predict_baseline(scene: Scene, mats: TransitionMatrices, deps: list[CorridorDependency],
                     config: PredictConfig) -> dict[int, ChainResult]:
    disc = mats.disc
    psi = default_psi(disc.n_u, config.psi_self)
    corridors = {c.id: c for c in scene.all_corridors()}
    blocking = {d.dependent_corridor_id: d for d in deps}
    order = dependency_order(list(corridors), deps)
    layout = {cid: layout_lambda(disc, _speed_caps(c, disc, config.a_lat)) for cid, c in corridors.items()}
    res = {}
    for cid in order:
        c = corridors[cid]
        st = scene.states[c.vehicle_id]
        res[cid] = ChainResult(c, [initial_distribution(disc, st.v, st.a)], [])
    for k in range(config.horizon_steps):
        for cid in order:
            c = corridors[cid]
            chain = res[cid]
            dep = blocking.get(cid)
            lam_layout = layout[cid]
            if dep is None:
                def gamma_fn(active, lam_layout=lam_layout):
                    return build_gamma(psi, lam_layout[active])
            else:
                blk = corridors[dep.blocking_corridor_id]
                p_blk = res[blk.id].dists[k + 1]
                cols = np.flatnonzero(p_blk > 0)
                c_dep = _chain_coord(c, dep.conflict_s_dependent, disc)
                c_blk = _chain_coord(blk, dep.conflict_s_blocking, disc)
                h_dep = conflict_half_window(scene.states[c.vehicle_id].length)
                h_blk = conflict_half_window(scene.states[blk.vehicle_id].length)

                def gamma_fn(active, lam_layout=lam_layout, cols=cols, p_blk=p_blk, c_dep=c_dep,
                             c_blk=c_blk, h_dep=h_dep, h_blk=h_blk):
                    inter = interaction_matrix(disc, active, c_dep, h_dep, cols, c_blk, h_blk, config.t_gap)
                    lam = lam_layout[active] * interaction_lambda(inter, p_blk[cols], disc.n_u)
                    return build_gamma(psi, lam)
            p_next, interval = propagate(chain.dists[-1], gamma_fn, mats)
            chain.dists.append(p_next)
            chain.intervals.append(interval)
    return res


def predict_hybrid(lmap: LaneletMap, rec: Recording, scene: Scene, mats: TransitionMatrices, model: ARModel,
                   config: PredictConfig) -> dict[int, ChainResult]:
    disc = mats.disc
    psi = default_psi(disc.n_u, config.psi_self)
    leaders = {r.target_vehicle_id: r for r in lateral_relations(list(scene.states.values()),
                                                                  scene.all_corridors())}
    res = {}
    for c in scene.all_corridors():
        x = corridor_features(lmap, rec, scene, c.vehicle_id, c, leaders)
        dist = profile_to_distributions(infer(model, x), disc)
        st = scene.states[c.vehicle_id]
        chain = ChainResult(c, [initial_distribution(disc, st.v, st.a)], [])
        for k in range(config.horizon_steps):
            gamma = build_gamma_hybrid(psi, dist.masses[min(k, len(dist.masses) - 1)])
            p_next, interval = propagate(chain.dists[-1], gamma, mats)
            chain.dists.append(p_next)
            chain.intervals.append(interval)
        res[c.id] = chain
    return res


def yield_violation(dep: CorridorDependency, chains: dict[int, ChainResult], scene: Scene,
                    disc: Discretization) -> float:
    """Largest probability, over the horizon, that the dependent chain
    occupies the conflict window during a step while the blocking chain has
    not yet cleared it."""
    d = chains[dep.dependent_corridor_id]
    b = chains[dep.blocking_corridor_id]
    c_d = _chain_coord(d.corridor, dep.conflict_s_dependent, disc)
    c_b = _chain_coord(b.corridor, dep.conflict_s_blocking, disc)
    h_d = conflict_half_window(scene.states[d.corridor.vehicle_id].length)
    h_b = conflict_half_window(scene.states[b.corridor.vehicle_id].length)
    in_window = np.abs(disc.s_centers - c_d) <= h_d
    uncleared = disc.s_centers <= c_b + h_b
    worst = 0.0
    for k, interval in enumerate(d.intervals):
        m_d = float(s_marginal(interval, disc)[in_window].sum())
        m_b = float(s_marginal(b.dists[k], disc)[uncleared].sum())
        worst = max(worst, m_d * m_b)
    return worst


# --------------------------------------------------------------------------
# runs


@dataclass
class RunReport:
    mode: str
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)
    step_times: list[float] = field(default_factory=list)
    grids: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {"mode": self.mode, "seeds": self.seeds, "n_rows": len(self.rows),
               "n_prediction_steps": len(self.step_times)}
        if self.rows:
            out["mADE"] = float(np.mean([r["mADE"] for r in self.rows]))
            out["mFDE"] = float(np.mean([r["mFDE"] for r in self.rows]))
            out["max_yield_violation"] = float(max(r["yield_violation"] for r in self.rows))
            per = []
            for seed in self.seeds:
                sel = [r for r in self.rows if r["seed"] == seed]
                if sel:
                    per.append({"seed": seed, "mADE": float(np.mean([r["mADE"] for r in sel])),
                                "mFDE": float(np.mean([r["mFDE"] for r in sel]))})
            out["per_repeat"] = per
        out["time_per_step"] = float(np.mean(self.step_times)) if self.step_times else 0.0
        return out


def _eligible(track: Track, t: float, history: float, horizon: float) -> bool:
    return t - track.t_start >= history - EPS_T and track.t_end >= t + horizon - EPS_T


def run_recording(lmap: LaneletMap, rec: Recording, mats: TransitionMatrices, config: PredictConfig,
                  seed: int, repeat: int, report: RunReport, model: ARModel | None = None) -> None:
    disc = mats.disc
    horizon = config.horizon_steps * disc.tau
    fcfg = FilterConfig(n_particles=config.n_particles)
    k0 = math.ceil(rec.t_start / DT - 1e-9)
    k1 = math.floor(rec.t_end / DT + 1e-9)
    filters: dict[int, IntentionFilter] = {}
    scene = None
    for n, kk in enumerate(range(k0, k1 + 1)):
        t = round(kk * DT, 10)
        refresh = n % TICK == 0
        if refresh:
            scene = build_scene(lmap, rec, t, config.lane_changes)
            for vid in list(filters):
                if vid not in scene.states:
                    del filters[vid]
        for vid in scene.vehicle_ids:
            tr = rec.tracks[vid]
            if not tr.covers(t):
                continue
            z = measurement_at(tr, t)
            f = filters.get(vid)
            if f is None:
                if not refresh:
                    continue
                filters[vid] = f = IntentionFilter(vid, scene.corridors[vid], z, fcfg, seed)
            else:
                if refresh:
                    f.set_corridors(scene.corridors[vid], z)
                f.step(z, DT)
            if refresh:
                f.set_contexts(gap_contexts(lmap, scene, vid))
        if not refresh:
            continue
        scored = [vid for vid in scene.vehicle_ids
                  if vid in filters and _eligible(rec.tracks[vid], t, config.history, horizon)]
        if not scored:
            continue
        try:
            _evaluate(lmap, rec, scene, filters, scored, mats, config, seed, repeat, report, model)
        except Exception as exc:  # keep the time context
            raise PredictionError(f"recording {rec.recording_id}, t={t:.1f}: {exc}") from exc


def _evaluate(lmap, rec, scene, filters, scored, mats, config, seed, repeat, report, model) -> None:
    disc = mats.disc
    t = scene.t
    states = list(scene.states.values())
    start = time.perf_counter()
    if config.mode == "baseline":
        deps = corridor_dependencies(scene.all_corridors(), states, lmap)
        chains = predict_baseline(scene, mats, deps, config)
    else:
        chains = predict_hybrid(lmap, rec, scene, mats, model, config)
    positions = {cid: [expected_position(p, ch.corridor, disc) for p in ch.dists[1:]]
                 for cid, ch in chains.items()}
    report.step_times.append(time.perf_counter() - start)
    if config.mode != "baseline":
        deps = corridor_dependencies(scene.all_corridors(), states, lmap)
    times = t + disc.tau * np.arange(1, config.horizon_steps + 1)
    for vid in scored:
        tr = rec.tracks[vid]
        smp = tr.sample(times)
        gt = np.column_stack([smp["x"], smp["y"]])
        errs = [ade_fde(positions[c.id], gt) for c in scene.corridors[vid]]
        made, mfde = min_over_corridors(errs, config.joint_min)
        viol = max([yield_violation(d, chains, scene, disc) for d in deps
                    if chains[d.dependent_corridor_id].corridor.vehicle_id == vid] or [0.0])
        report.rows.append({
            "mode": config.mode, "repeat": repeat, "seed": seed, "recording_id": rec.recording_id,
            "time": round(t, 6), "vehicle_id": vid, "mADE": made, "mFDE": mfde,
            "n_corridors": len(scene.corridors[vid]), "n_steps": config.horizon_steps,
            "yield_violation": viol,
        })
        if config.collect_grids:
            post = filters[vid].posterior()
            preds = [(c, post.corridor_probs[c.id], chains[c.id].dists[1:]) for c in scene.corridors[vid]]
            report.grids.append((repeat, round(t, 6), vid, render_grid(vid, preds, disc)))


def run_prediction(lmap: LaneletMap, dataset: TrackDataset, mats: TransitionMatrices,
                   config: PredictConfig, model: ARModel | None = None) -> RunReport:
    if config.mode == "hybrid" and model is None:
        raise ConfigError("hybrid mode requires a trained model")
    report = RunReport(config.mode, config.seeds)
    for repeat, seed in enumerate(config.seeds):
        for rec in dataset.recordings:
            run_recording(lmap, rec, mats, config, seed, repeat, report, model)
    return report


# --------------------------------------------------------------------------
# output


METRIC_COLUMNS = ("mode", "repeat", "seed", "recording_id", "time", "vehicle_id", "mADE", "mFDE",
                  "n_corridors", "n_steps", "yield_violation")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_report(reports: list[RunReport], out_dir, extra_summary: dict | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for rep in reports:
            for row in rep.rows:
                w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    summary = {rep.mode: rep.summary() for rep in reports}
    if "baseline" in summary and "hybrid" in summary and summary["hybrid"]["time_per_step"] > 0:
        summary["speedup"] = summary["baseline"]["time_per_step"] / summary["hybrid"]["time_per_step"]
    if extra_summary:
        summary.update(extra_summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def read_metrics(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mADE", "mFDE", "yield_violation", "time"):
            r[k] = float(r[k])
        for k in ("repeat", "seed", "recording_id", "vehicle_id", "n_corridors", "n_steps"):
            r[k] = int(r[k])
    return rows


def config_dict(config: PredictConfig) -> dict:
    return asdict(config)
