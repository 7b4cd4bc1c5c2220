"""Small end-to-end drivers shared by several test modules."""

import numpy as np

from iamp.corridors import enumerate_corridors
from iamp.intention import IntentionFilter, Measurement
from iamp.scenarios import generate_scenario

FORK_X = 60.0  # where branch 3 leaves the straight


def _z(tr, i):
    return Measurement(tr.x[i], tr.y[i], tr.heading[i], tr.v[i], tr.t[i])


def fork_true_posterior(seed):
    """Run the particle filter along the scripted fork recording.

    Returns ``[(t - t_divergence, P(true branch))]`` for every step after
    divergence, re-enumerating corridors every 0.4 s like the pipeline.
    """
    lmap, ds = generate_scenario("fork", seed)
    rec = ds.recordings[0]
    tr = rec.tracks[1]
    true_branch = rec.meta["routes"]["1"][-1]

    def corridors(i):
        return enumerate_corridors(lmap, (tr.x[i], tr.y[i], tr.heading[i]), tr.v[i], vehicle_id=1, first_id=100)

    f = IntentionFilter(1, corridors(0), _z(tr, 0), seed=seed)
    t_div = None
    out = []
    for i in range(1, len(tr.t)):
        if i % 4 == 0:
            f.set_corridors(corridors(i), _z(tr, i))
        post = f.step(_z(tr, i), 0.1)
        if t_div is None and tr.x[i] >= FORK_X:
            t_div = tr.t[i]
        if t_div is not None:
            by_id = {c.id: c for c in f.corridors}
            p = sum(prob for cid, prob in post.corridor_probs.items() if true_branch in by_id[cid].lanelet_seq)
            out.append((float(np.round(tr.t[i] - t_div, 6)), p))
    return out


def synthetic_linear_process(n_train=5000, n_test=2000, noise_std=0.1, seed=0, d=220, k=40):
    """Uniform features, a known weight matrix and Gaussian target noise."""
    rng = np.random.default_rng(seed)
    w_true = rng.normal(0.0, 1.0 / np.sqrt(d), (k, d))

    def make(n):
        X = rng.random((n, d))
        return X, X @ w_true.T + rng.normal(0.0, noise_std, (n, k))

    return make(n_train), make(n_test), w_true
