from types import SimpleNamespace

import numpy as np
import pytest

from iamp.accel_ar import HORIZON_SAMPLES, N_FEATURES, ARModel
from iamp.corridors import enumerate_corridors
from iamp.markov import Discretization
from iamp.pipeline import (ChainResult, ConfigError, PredictConfig, build_training_set, read_metrics,
                           run_prediction, write_report, yield_violation)
from iamp.relations import CorridorDependency
from iamp.scenarios import generate_scenario, straight_map


def _zero_model():
    return ARModel(np.zeros((HORIZON_SAMPLES, N_FEATURES)), np.zeros(HORIZON_SAMPLES),
                   np.zeros(N_FEATURES), np.ones(N_FEATURES))


@pytest.fixture(scope="module")
def straight():
    return generate_scenario("straight", 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        PredictConfig(mode="fast")
    with pytest.raises(ConfigError):
        PredictConfig(repeats=0)
    assert PredictConfig(seed=4, repeats=3).seeds == [4, 5, 6]


def test_hybrid_requires_model(straight, mats):
    with pytest.raises(ConfigError):
        run_prediction(*straight, mats, PredictConfig(mode="hybrid", repeats=1))


def test_constant_speed_prediction_on_straight_road(straight, mats):
    rep = run_prediction(*straight, mats, PredictConfig(mode="hybrid", repeats=1), _zero_model())
    s = rep.summary()
    assert s["n_rows"] > 0
    assert s["mADE"] < 2.0
    assert s["max_yield_violation"] == 0.0


def test_baseline_on_straight_road(straight, mats):
    rep = run_prediction(*straight, mats, PredictConfig(repeats=1))
    assert rep.summary()["mADE"] < 2.0


def test_runs_are_deterministic(straight, mats):
    cfg = PredictConfig(mode="hybrid", repeats=2, seed=3)
    a = run_prediction(*straight, mats, cfg, _zero_model()).rows
    b = run_prediction(*straight, mats, cfg, _zero_model()).rows
    assert a == b
    assert {r["seed"] for r in a} == {3, 4}


def test_summary_recomputes_from_csv(straight, mats, tmp_path):
    rep = run_prediction(*straight, mats, PredictConfig(repeats=2))
    summary = write_report([rep], tmp_path)
    rows = read_metrics(tmp_path / "metrics.csv")
    assert len(rows) == summary["baseline"]["n_rows"]
    assert np.mean([r["mADE"] for r in rows]) == pytest.approx(summary["baseline"]["mADE"], abs=1e-6)
    assert np.mean([r["mFDE"] for r in rows]) == pytest.approx(summary["baseline"]["mFDE"], abs=1e-6)
    for per in summary["baseline"]["per_repeat"]:
        sel = [r["mADE"] for r in rows if r["seed"] == per["seed"]]
        assert np.mean(sel) == pytest.approx(per["mADE"], abs=1e-6)


def test_training_set_shapes(straight):
    X, Y = build_training_set(*straight)
    assert X.shape[1] == N_FEATURES and Y.shape[1] == HORIZON_SAMPLES
    assert len(X) == len(Y) > 0
    assert np.all(np.isfinite(X)) and np.all(np.isfinite(Y))


def _mass_at_cell(disc, i_s):
    p = np.zeros(disc.size)
    p[i_s * disc.n_v * disc.n_u] = 1.0
    return p


def test_yield_violation_hand_cases():
    disc = Discretization()
    lmap = straight_map()
    c = enumerate_corridors(lmap, (0.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=100)[0]
    dep_c = c
    blk_c = enumerate_corridors(lmap, (0.0, 0.0, 0.0), 10.0, vehicle_id=2, first_id=200)[0]
    scene = SimpleNamespace(states={1: SimpleNamespace(length=4.5), 2: SimpleNamespace(length=4.5)})
    # conflict 20 m ahead of both vehicles: chain cell 10
    dep = CorridorDependency(100, 200, dep_c.start_s + 20.0, blk_c.start_s + 20.0)
    inside, before, after = _mass_at_cell(disc, 10), _mass_at_cell(disc, 0), _mass_at_cell(disc, 20)
    d = ChainResult(dep_c, [before, inside], [inside])
    chains = {100: d, 200: ChainResult(blk_c, [before, before], [before])}
    assert yield_violation(dep, chains, scene, disc) == 1.0
    chains[200] = ChainResult(blk_c, [after, after], [after])
    assert yield_violation(dep, chains, scene, disc) == 0.0
    chains[100] = ChainResult(dep_c, [before, before], [before])
    chains[200] = ChainResult(blk_c, [before, before], [before])
    assert yield_violation(dep, chains, scene, disc) == 0.0
    half = 0.5 * (inside + before)
    chains[100] = ChainResult(dep_c, [before, half], [half])
    split = 0.5 * (before + after)
    chains[200] = ChainResult(blk_c, [split, split], [split])
    assert yield_violation(dep, chains, scene, disc) == pytest.approx(0.25)
