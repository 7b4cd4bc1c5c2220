import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from iamp.accel_ar import (A_MAX, A_MIN, HISTORY_STEPS, N_FEATURES, SENTINEL_DISTANCE, ARModel,
                           DimensionMismatchError, InsufficientHistoryError, OtherVehicle, TrainConfig,
                           cosine_lr, combined_loss, extract_features, feature_names, infer,
                           profile_to_distributions, read_dataset, train, write_dataset)
from iamp.markov import Discretization

from .drivers import synthetic_linear_process

ZEROS = np.zeros(HISTORY_STEPS)
TRAVEL = -np.arange(HISTORY_STEPS - 1, -1, -1) * 4.0  # 10 m/s, 0.4 s apart


def test_feature_vector_shape_and_sentinels():
    x = extract_features(ZEROS, np.full(HISTORY_STEPS, 10.0), TRAVEL, None)
    assert x.shape == (N_FEATURES,) == (220,)
    rows = x.reshape(HISTORY_STEPS, -1)
    assert np.all(rows[:, 1] == SENTINEL_DISTANCE)   # no leader
    assert np.all(rows[:, 2] == 10.0)                # leader speed defaults to own speed
    assert np.all(rows[:, 3] == SENTINEL_DISTANCE)   # no intersection
    assert np.all(rows[:, 16] == SENTINEL_DISTANCE) and np.all(rows[:, 18] == 0.0)
    assert len(feature_names()) == 220


def test_leader_gap_reconstructed_back_in_time():
    # leader standing still 20 m ahead: the gap was 36 m larger 3.6 s ago
    leader = OtherVehicle(20.0, np.zeros(HISTORY_STEPS), np.zeros(HISTORY_STEPS))
    rows = extract_features(ZEROS, np.full(HISTORY_STEPS, 10.0), TRAVEL, None, leader=leader).reshape(HISTORY_STEPS, -1)
    assert rows[-1, 1] == pytest.approx(20.0)
    assert rows[0, 1] == pytest.approx(56.0)
    # and the intersection distance with it
    rows = extract_features(ZEROS, np.full(HISTORY_STEPS, 10.0), TRAVEL, None, d_int=5.0).reshape(HISTORY_STEPS, -1)
    assert rows[0, 3] == pytest.approx(41.0)


def test_insufficient_history():
    with pytest.raises(InsufficientHistoryError):
        extract_features(np.zeros(4), np.zeros(4), np.zeros(4), None)


def test_linear_recovery():
    (X, Y), (Xt, Yt), _ = synthetic_linear_process()
    model = train(X, Y, TrainConfig(seed=0))
    mse = float(np.mean((infer(model, Xt, clamp=False) - Yt) ** 2))
    assert mse <= 0.012


def test_zero_target_and_determinism():
    rng = np.random.default_rng(3)
    X = rng.random((500, N_FEATURES))
    Y = np.zeros((500, 40))
    m1 = train(X, Y, TrainConfig(epochs=20, seed=4))
    m2 = train(X, Y, TrainConfig(epochs=20, seed=4))
    assert np.max(np.abs(infer(m1, X))) < 1e-2
    assert np.array_equal(m1.W, m2.W) and np.array_equal(m1.b, m2.b)


def test_infer_dimension_and_clamp():
    model = ARModel(np.full((40, 3), 10.0), np.zeros(40), np.zeros(3), np.ones(3))
    assert np.all(infer(model, np.ones(3)) == A_MAX)
    with pytest.raises(DimensionMismatchError):
        infer(model, np.ones(4))


def test_cosine_lr_schedule():
    cfg = TrainConfig(lr=0.01, lr_min=1e-4, restart_every=10, restart_decay=0.1)
    assert cosine_lr(0.0, cfg) == pytest.approx(0.01)
    assert cosine_lr(5.0, cfg) == pytest.approx(1e-4 + 0.5 * (0.01 - 1e-4))
    assert cosine_lr(9.999, cfg) == pytest.approx(1e-4, abs=1e-6)
    assert cosine_lr(10.0, cfg) == pytest.approx(0.001)
    assert cosine_lr(30.0, cfg) == pytest.approx(1e-4)


def test_combined_loss_gradient():
    rng = np.random.default_rng(0)
    pred, y = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    loss, grad = combined_loss(pred, y)
    h = 1e-6
    e = np.zeros_like(pred)
    e[1, 2] = h
    numeric = (combined_loss(pred + e, y)[0] - combined_loss(pred - e, y)[0]) / (2 * h)
    assert grad[1, 2] == pytest.approx(numeric, rel=1e-5)


def _quad_masses(mu, sd, edges):
    raw = np.array([integrate.quad(stats.norm(mu, sd).pdf, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    return raw / raw.sum()


def test_profile_masses_match_quadrature():
    disc = Discretization()
    profile = np.repeat([-2.5, -1.0, 0.0, 0.3, 1.9, -0.2, 0.8, 1.2, -3.0, 2.0], 4) + np.tile([0, 0.2, -0.2, 0.1], 10)
    dist = profile_to_distributions(profile, disc)
    assert dist.masses.shape == (10, disc.n_u)
    for k in range(10):
        grp = profile[4 * k:4 * k + 4]
        sd = max(np.std(grp), 0.25)
        assert dist.means[k] == pytest.approx(grp.mean())
        np.testing.assert_allclose(dist.masses[k], _quad_masses(grp.mean(), sd, disc.accel_edges), atol=1e-8)


@given(st.lists(st.floats(-6.0, 6.0), min_size=40, max_size=40))
def test_profile_masses_normalized(profile):
    disc = Discretization()
    dist = profile_to_distributions(np.array(profile), disc)
    np.testing.assert_allclose(dist.masses.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(dist.masses >= 0)
    assert disc.accel_edges[0] == A_MIN and disc.accel_edges[-1] == A_MAX


def test_profile_far_outside_range():
    dist = profile_to_distributions(np.full(40, -80.0))
    assert np.all(dist.masses[:, 0] == 1.0)


def test_profile_wrong_length():
    with pytest.raises(DimensionMismatchError):
        profile_to_distributions(np.zeros(39))


def test_model_save_load(tmp_path):
    rng = np.random.default_rng(1)
    m = ARModel(rng.normal(size=(40, 220)), rng.normal(size=40), np.zeros(220), np.ones(220), {"seed": 1})
    m.save(tmp_path / "m.bin")
    m2 = ARModel.load(tmp_path / "m.bin")
    assert np.array_equal(m.W, m2.W) and np.array_equal(m.b, m2.b) and m2.meta == {"seed": 1}


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(7, 220)), rng.normal(size=(7, 40))
    write_dataset(tmp_path / "d.csv", X, Y)
    X2, Y2 = read_dataset(tmp_path / "d.csv")
    assert np.array_equal(X, X2) and np.array_equal(Y, Y2)


def test_dataset_bad_header(tmp_path):
    (tmp_path / "d.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "d.csv")


def test_zero_profile_mass_on_zero_cells():
    # zero lies on a cell edge, so the mass is split between the two neighbours
    disc = Discretization()
    dist = profile_to_distributions(np.zeros(40), disc)
    zero_edge = int(np.flatnonzero(np.isclose(disc.accel_edges, 0.0))[0])
    both = dist.masses[:, zero_edge - 1] + dist.masses[:, zero_edge]
    cdf = stats.norm(0.0, 0.25).cdf
    expected = (cdf(0.4) - cdf(-0.6)) / (cdf(2.0) - cdf(-3.0))
    np.testing.assert_allclose(both, expected, rtol=1e-9)
    assert math.isclose(dist.masses.sum(), 10.0)
