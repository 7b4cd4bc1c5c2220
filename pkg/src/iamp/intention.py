"""Per-vehicle particle filter over expected maneuver, intention, route and
physical state.

Each particle carries the expected maneuver ``E`` and intended maneuver
``I`` (True = go), a corridor index ``R`` and the arc-length position and
speed on that corridor.  Transitions:

* ``E``: gap acceptance at the next conflict,
  ``P(go) = logistic(alpha * (t_other - t_self) + beta * priority)``,
  and ``P(go) = 1`` when nothing conflicts ahead;
* ``I``: copies ``E`` with probability ``compliance`` when it agreed with
  ``E`` before, otherwise keeps its previous value with ``stickiness``;
* ``R``: with probability ``1 - route_persistence`` re-drawn uniformly among
  corridors sharing the lanelets driven so far;
* state: ``go`` draws a zero-mean acceleration, ``stop`` decelerates to
  standstill at the stop point; both clamped to [-3, 2] m/s^2 before noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .corridors import Corridor

log = logging.getLogger(__name__)

A_MIN, A_MAX = -3.0, 2.0


class EmptyCorridorSetError(ValueError):
    pass


@dataclass(frozen=True)
class Measurement:
    x: float
    y: float
    heading: float
    v: float
    timestamp: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("measured speed must be non-negative")


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 200
    sigma_xy: float = 0.5
    sigma_v: float = 0.5
    sigma_a: float = 0.5
    compliance: float = 0.9
    stickiness: float = 0.7
    route_persistence: float = 0.95
    alpha: float = 1.0
    beta: float = 4.0
    default_decel: float = 2.0
    speed_factor: float = 1.2
    stop_margin: float = 1.0


@dataclass(frozen=True)
class GapContext:
    """What lies ahead on one corridor: the point to stop at, the other
    vehicle's time to the conflict and the corridor's priority (+1, 0, -1)."""
    stop_s: float
    conflict_s: float
    t_other: float
    priority: int
    intersection_id: int | None = None
    t_ref: float = 0.0


@dataclass
class IntentionPosterior:
    vehicle_id: int
    timestamp: float
    corridor_probs: dict[int, float]
    p_stop: dict[int, float] = field(default_factory=dict)
    effective_sample_size: float = 0.0


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, n - 1)


def _compatible(old: Corridor, new: Corridor) -> int | None:
    """Index in ``old.lanelet_seq`` where ``new`` starts, if ``new`` continues
    ``old`` over the part they share."""
    first = new.lanelet_seq[0]
    if first not in old.lanelet_seq:
        return None
    j = old.lanelet_seq.index(first)
    m = min(len(old.lanelet_seq) - j, len(new.lanelet_seq))
    if old.lanelet_seq[j:j + m] != new.lanelet_seq[:m]:
        return None
    return j


class IntentionFilter:
    def __init__(self, vehicle_id: int, corridors: list[Corridor], z0: Measurement,
                 config: FilterConfig | None = None, seed: int = 0):
        self.vehicle_id = vehicle_id
        self.config = config or FilterConfig()
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, vehicle_id]))
        self.contexts: dict[int, GapContext] = {}
        self.timestamp = z0.timestamp
        self._init(corridors, z0)

    # -- setup -------------------------------------------------------------

    def _init(self, corridors: list[Corridor], z: Measurement) -> None:
        if not corridors:
            raise EmptyCorridorSetError(f"vehicle {self.vehicle_id}: no corridors")
        n = self.config.n_particles
        self.corridors = list(corridors)
        self.R = np.arange(n) % len(corridors)
        s0 = np.array([c.project((z.x, z.y))[0] for c in corridors])
        self.s = s0[self.R].astype(float)
        self.v = np.full(n, z.v, dtype=float)
        self.E = np.ones(n, dtype=bool)
        self.I = np.ones(n, dtype=bool)
        self.w = np.full(n, 1.0 / n)
        self._route_groups()

    def _route_groups(self) -> None:
        # per corridor and lanelet index: corridors sharing the prefix
        self._groups = []
        for c in self.corridors:
            per = []
            for k in range(len(c.lanelet_seq)):
                prefix = c.lanelet_seq[:k + 1]
                per.append(np.array([j for j, o in enumerate(self.corridors)
                                     if o.lanelet_seq[:k + 1] == prefix
                                     and o.lanelet_offsets[:k + 1] == c.lanelet_offsets[:k + 1]]))
            self._groups.append(per)

    def set_corridors(self, corridors: list[Corridor], z: Measurement) -> None:
        """Move particles onto a fresh corridor set, keeping route beliefs for
        corridors that continue the old ones."""
        if not corridors:
            raise EmptyCorridorSetError(f"vehicle {self.vehicle_id}: no corridors")
        if [c.lanelet_seq for c in corridors] == [c.lanelet_seq for c in self.corridors]:
            self.corridors = list(corridors)
            self._route_groups()
            return
        options = []
        for old in self.corridors:
            opts = []
            for j, new in enumerate(corridors):
                k = _compatible(old, new)
                if k is not None:
                    opts.append((j, old.lanelet_offsets[k]))
            options.append(opts)
        n = len(self.w)
        new_R = np.empty(n, dtype=int)
        new_s = np.empty(n)
        alive = np.ones(n, dtype=bool)
        for i in range(n):
            opts = options[self.R[i]]
            if not opts:
                alive[i] = False
                continue
            j, off = opts[int(self.rng.integers(len(opts)))] if len(opts) > 1 else opts[0]
            new_R[i] = j
            new_s[i] = self.s[i] - off
        if not alive.any():
            log.info("vehicle %s: no particle fits the new corridors; reinitializing", self.vehicle_id)
            self._init(corridors, z)
            return
        self.corridors = list(corridors)
        self.R = np.where(alive, new_R, 0)
        self.s = np.where(alive, new_s, 0.0)
        w = np.where(alive, self.w, 0.0)
        self.w = w / w.sum()
        if not alive.all():
            self._resample()
        self._route_groups()

    def set_contexts(self, contexts: dict[int, GapContext]) -> None:
        """Gap contexts keyed by corridor index."""
        self.contexts = dict(contexts)

    # -- transition --------------------------------------------------------

    def _p_go(self, t: float) -> np.ndarray:
        cfg = self.config
        p = np.ones(len(self.w))
        for ci, ctx in self.contexts.items():
            sel = (self.R == ci) & (self.s < ctx.conflict_s)
            if not sel.any():
                continue
            t_other = ctx.t_other - (t - ctx.t_ref)
            if not math.isfinite(t_other):
                continue
            t_self = (ctx.conflict_s - self.s[sel]) / np.maximum(self.v[sel], 0.1)
            p[sel] = logistic(cfg.alpha * (t_other - t_self) + cfg.beta * ctx.priority)
        return p

    def predict_step(self, dt: float, t: float | None = None, noise: bool = True) -> None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        cfg = self.config
        rng = self.rng
        n = len(self.w)
        t = self.timestamp + dt if t is None else t
        # expected maneuver
        self.E = rng.random(n) < self._p_go(t)
        # intention
        agree = self.I == self.E
        keep_e = rng.random(n) < cfg.compliance
        keep_prev = rng.random(n) < cfg.stickiness
        self.I = np.where(agree, np.where(keep_e, self.E, ~self.E), np.where(keep_prev, self.I, self.E))
        # route
        switch = np.flatnonzero(rng.random(n) >= cfg.route_persistence)
        for i in switch:
            c = self.corridors[self.R[i]]
            k = int(c.lanelet_index_at(self.s[i]))
            group = self._groups[self.R[i]][k]
            self.R[i] = group[int(rng.integers(len(group)))]
        # physical state
        acc = np.zeros(n)
        stop = ~self.I
        if stop.any():
            acc[stop] = -cfg.default_decel
            for ci, ctx in self.contexts.items():
                sel = stop & (self.R == ci)
                if not sel.any():
                    continue
                dist = ctx.stop_s - cfg.stop_margin - self.s[sel]
                v = self.v[sel]
                with np.errstate(divide="ignore"):
                    need = np.where(dist > 0.1, -v ** 2 / (2 * np.maximum(dist, 0.1)), A_MIN)
                acc[sel] = np.where(self.s[sel] < ctx.conflict_s, np.clip(need, A_MIN, 0.0), 0.0)
        if noise and cfg.sigma_a > 0:
            acc = acc + rng.normal(0.0, cfg.sigma_a, n)
        lim = np.empty(n)
        for ci, c in enumerate(self.corridors):
            sel = self.R == ci
            if sel.any():
                lim[sel] = c.speed_limit_at(self.s[sel])
        v_new = np.clip(self.v + acc * dt, 0.0, cfg.speed_factor * lim)
        self.s = self.s + 0.5 * (self.v + v_new) * dt
        self.v = v_new
        for ci, c in enumerate(self.corridors):
            sel = self.R == ci
            if sel.any():
                self.s[sel] = np.clip(self.s[sel], 0.0, c.length)
        self.timestamp = t

    # -- measurement -------------------------------------------------------

    def positions(self) -> np.ndarray:
        out = np.empty((len(self.w), 2))
        for ci, c in enumerate(self.corridors):
            sel = self.R == ci
            if sel.any():
                out[sel] = c.centerline.point_at(self.s[sel])
        return out

    def log_likelihood(self, z: Measurement) -> np.ndarray:
        cfg = self.config
        d2 = np.sum((self.positions() - np.array([z.x, z.y])) ** 2, axis=1)
        return -0.5 * d2 / cfg.sigma_xy ** 2 - 0.5 * (self.v - z.v) ** 2 / cfg.sigma_v ** 2

    def _resample(self) -> None:
        idx = systematic_resample(self.w, self.rng)
        for name in ("R", "s", "v", "E", "I"):
            setattr(self, name, getattr(self, name)[idx].copy())
        self.w = np.full(len(idx), 1.0 / len(idx))

    def update_step(self, z: Measurement) -> IntentionPosterior:
        ll = self.log_likelihood(z)
        top = ll.max()
        if top < math.log(np.finfo(float).tiny):
            log.info("vehicle %s: all likelihoods underflow at t=%.2f; reinitializing", self.vehicle_id,
                     z.timestamp)
            self._init(self.corridors, z)
        else:
            w = self.w * np.exp(ll - top)
            total = w.sum()
            if total <= 0 or not np.isfinite(total):
                self._init(self.corridors, z)
            else:
                self.w = w / total
        ess = 1.0 / float(np.sum(self.w ** 2))
        if ess < len(self.w) / 2:
            self._resample()
        self.timestamp = z.timestamp
        return self.posterior(ess)

    def step(self, z: Measurement, dt: float) -> IntentionPosterior:
        self.predict_step(dt, z.timestamp)
        return self.update_step(z)

    def posterior(self, ess: float | None = None) -> IntentionPosterior:
        sums = np.bincount(self.R, weights=self.w, minlength=len(self.corridors))
        total = sums.sum()
        probs = {c.id: float(sums[i] / total) for i, c in enumerate(self.corridors)}
        p_stop: dict[int, float] = {}
        by_inter: dict[int, list[int]] = {}
        for ci, ctx in self.contexts.items():
            if ctx.intersection_id is not None:
                by_inter.setdefault(ctx.intersection_id, []).append(ci)
        for inter, cis in sorted(by_inter.items()):
            sel = np.isin(self.R, cis)
            mass = self.w[sel].sum()
            p_stop[inter] = float(self.w[sel & ~self.I].sum() / mass) if mass > 0 else 0.0
        if ess is None:
            ess = 1.0 / float(np.sum(self.w ** 2))
        return IntentionPosterior(self.vehicle_id, self.timestamp, probs, p_stop, ess)
