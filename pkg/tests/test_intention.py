import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iamp.corridors import enumerate_corridors
from iamp.intention import (EmptyCorridorSetError, FilterConfig, GapContext, IntentionFilter, Measurement,
                            logistic, systematic_resample)
from iamp.scenarios import crossing_map, fork_map, straight_map

from .drivers import fork_true_posterior


def _z(x, y=0.0, v=10.0, t=0.0, heading=0.0):
    return Measurement(x, y, heading, v, t)


def test_single_corridor_probability_exactly_one():
    lmap = straight_map()
    cs = enumerate_corridors(lmap, (5.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=100)
    assert len(cs) == 1
    f = IntentionFilter(1, cs, _z(5.0))
    for k in range(1, 30):
        post = f.step(_z(5.0 + k, t=0.1 * k), 0.1)
        assert post.corridor_probs == {100: 1.0}


def test_fork_converges_to_true_branch():
    for seed in (0, 1):
        trace = fork_true_posterior(seed)
        p2 = next(p for dt, p in trace if dt >= 2.0 - 1e-9)
        assert p2 > 0.8


def test_logistic_values():
    assert logistic(0.0) == 0.5
    assert logistic(50.0) == pytest.approx(1.0)
    assert logistic(-3.0) == pytest.approx(1 / (1 + math.exp(3.0)))


@given(st.lists(st.floats(0.001, 1.0), min_size=1, max_size=50), st.integers(0, 1000))
def test_systematic_resample_counts(weights, seed):
    w = np.array(weights) / np.sum(weights)
    idx = systematic_resample(w, np.random.default_rng(seed))
    counts = np.bincount(idx, minlength=len(w))
    n = len(w)
    assert np.all(counts >= np.floor(n * w) - 1)
    assert np.all(counts <= np.ceil(n * w) + 1)
    assert counts.sum() == n


def _crossing_filter(t_other, priority, seed=0):
    lmap = crossing_map()
    pose = (1.75, -30.0, math.pi / 2)
    cs = [c for c in enumerate_corridors(lmap, pose, 8.0, vehicle_id=1) if 101 in c.lanelet_seq]
    f = IntentionFilter(1, cs, Measurement(1.75, -30.0, math.pi / 2, 8.0, 0.0),
                        FilterConfig(n_particles=2000), seed=seed)
    conflict = cs[0].start_s + 23.0
    f.set_contexts({0: GapContext(conflict - 5.0, conflict, t_other, priority, 1, 0.0)})
    return f


def _go_fraction(f):
    f.predict_step(0.1, noise=False)
    return float(np.mean(f.E))


def test_gap_acceptance_monotone_in_time_gap_and_priority():
    # own arrival is about 23/8 = 2.9 s
    early = _go_fraction(_crossing_filter(1.0, 0))
    late = _go_fraction(_crossing_filter(8.0, 0))
    assert early < 0.2 < 0.8 < late
    yielding = _go_fraction(_crossing_filter(3.0, -1))
    priority = _go_fraction(_crossing_filter(3.0, +1))
    assert yielding < 0.2 and priority > 0.9


def test_no_context_always_go():
    f = _crossing_filter(1.0, 0)
    f.set_contexts({})
    assert _go_fraction(f) == 1.0


def test_stop_intention_decelerates():
    f = _crossing_filter(0.5, -1)
    v0 = f.v.copy()
    for k in range(10):
        f.predict_step(0.1, noise=False)
    stopped = ~f.I
    assert stopped.any()
    assert np.all(f.v[stopped] < v0[stopped])


def test_set_corridors_keeps_route_belief():
    lmap = fork_map()
    cs = enumerate_corridors(lmap, (40.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=100)
    f = IntentionFilter(1, cs, _z(40.0), seed=1)
    f.w = np.where(f.R == 0, 0.9, 0.1)
    f.w /= f.w.sum()
    before = f.posterior().corridor_probs
    # same lanelet sequences, new ids
    cs2 = enumerate_corridors(lmap, (41.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=200)
    f.set_corridors(cs2, _z(41.0))
    after = f.posterior().corridor_probs
    assert sorted(after.values()) == pytest.approx(sorted(before.values()))


def test_empty_corridor_set():
    with pytest.raises(EmptyCorridorSetError):
        IntentionFilter(1, [], _z(0.0))


def test_deterministic_per_seed():
    lmap = fork_map()
    cs = enumerate_corridors(lmap, (40.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=100)
    runs = []
    for _ in range(2):
        f = IntentionFilter(1, cs, _z(40.0), seed=5)
        for k in range(1, 15):
            post = f.step(_z(40.0 + k, t=0.1 * k), 0.1)
        runs.append(post.corridor_probs)
    assert runs[0] == runs[1]
