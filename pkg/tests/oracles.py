"""Independent reference computations used by several test modules."""

import numpy as np


def mc_transition_column(disc, col, n_samples=100_000, n_sub=100, seed=0):
    """Monte-Carlo estimate of one transition column.

    Samples start uniformly inside the source cell and are integrated with
    small trapezoid steps of the clamped dynamics (no closed form).
    """
    rng = np.random.default_rng(seed + col)
    i_s, rem = divmod(col, disc.n_v * disc.n_u)
    i_v, i_u = divmod(rem, disc.n_u)
    s = (i_s + rng.random(n_samples)) * disc.ds
    v = (i_v + rng.random(n_samples)) * disc.dv
    u = -1.0 + (i_u + rng.random(n_samples)) * (2.0 / disc.n_u)
    a = np.where(u < 0, disc.a_max_neg * u, disc.a_max_pos * u)
    h = disc.tau / n_sub
    for _ in range(n_sub):
        v_next = np.clip(v + a * h, 0.0, disc.v_max)
        # exact distance for a step in which the speed hits a bound
        t_lin = np.where(a != 0, np.clip((v_next - v) / np.where(a != 0, a, 1.0), 0.0, h), h)
        s = s + v * t_lin + 0.5 * a * t_lin ** 2 + v_next * (h - t_lin)
        v = v_next
    js = np.minimum(np.floor(s / disc.ds).astype(int), disc.n_s - 1)
    jv = np.clip(np.floor(v / disc.dv).astype(int), 0, disc.n_v - 1)
    idx = (js * disc.n_v + jv) * disc.n_u + i_u
    return np.bincount(idx, minlength=disc.size) / n_samples


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def exhaustive_min(per_corridor):
    """Reference minima by scanning every corridor."""
    best_a = best_f = float("inf")
    for a, f in per_corridor:
        if a < best_a:
            best_a = a
        if f < best_f:
            best_f = f
    return best_a, best_f
