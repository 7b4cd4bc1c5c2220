"""Markov-chain abstraction of longitudinal vehicle dynamics.

The joint state is a cell of (arc length s, speed v, normalized input u).
Flat index ``((i_s * n_v) + i_v) * n_u + i_u``; u varies fastest.  A block is
one (s, v) cell, index ``i_s * n_v + i_v``.

Dynamics: ``ds/dt = v`` and ``dv/dt = a(u)`` with ``a(u) = a_neg * u`` for
``u < 0`` and ``a_pos * u`` otherwise.  The acceleration is switched off
while the speed sits at 0 and the input brakes, or at ``v_max`` and the input
accelerates.

One prediction step is ``p' = Gamma (Step p)``; the occupancy over the step is
``Interval p``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .binio import read_container, write_container

MAGIC = b"IAMPMC01"
NORMALIZATION_TOL = 1e-6
STOP_DECEL = 3.0


class NormalizationDriftError(RuntimeError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Discretization:
    n_s: int = 60
    ds: float = 2.0
    n_v: int = 15
    v_max: float = 15.0
    n_u: int = 10
    a_max_pos: float = 2.0
    a_max_neg: float = 3.0
    tau: float = 0.4

    def __post_init__(self):
        if min(self.n_s, self.n_v, self.n_u) < 1:
            raise ValueError("cell counts must be positive")
        if min(self.ds, self.v_max, self.a_max_pos, self.a_max_neg, self.tau) <= 0:
            raise ValueError("cell sizes, limits and tau must be positive")

    @property
    def dv(self) -> float:
        return self.v_max / self.n_v

    @property
    def n_blocks(self) -> int:
        return self.n_s * self.n_v

    @property
    def size(self) -> int:
        return self.n_s * self.n_v * self.n_u

    @property
    def u_edges(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n_u + 1)

    @property
    def accel_edges(self) -> np.ndarray:
        return accel_of(self.u_edges, self)

    @property
    def accel_centers(self) -> np.ndarray:
        e = self.accel_edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def v_centers(self) -> np.ndarray:
        return (np.arange(self.n_v) + 0.5) * self.dv

    @property
    def s_centers(self) -> np.ndarray:
        return (np.arange(self.n_s) + 0.5) * self.ds

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Discretization":
        fields = cls.__dataclass_fields__
        unknown = set(data) - set(fields)
        if unknown:
            raise ValueError(f"unknown discretization fields: {sorted(unknown)}")
        return cls(**data)


def accel_of(u, disc: Discretization):
    u = np.asarray(u, dtype=float)
    return np.where(u < 0, disc.a_max_neg * u, disc.a_max_pos * u)


def closed_form_step(s, v, u, disc: Discretization, tau: float | None = None):
    """Exact solution of the clamped longitudinal dynamics after ``tau``.

    Constant acceleration until the speed reaches 0 or ``v_max``, constant
    speed afterwards.  Vectorized over ``s``, ``v`` and ``u``.
    """
    tau = disc.tau if tau is None else tau
    s, v, a = np.broadcast_arrays(np.asarray(s, float), np.asarray(v, float), accel_of(u, disc))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_up = np.where(a > 0, (disc.v_max - v) / a, np.inf)
        t_down = np.where(a < 0, v / -a, np.inf)
    t_free = np.clip(np.minimum(t_up, t_down), 0.0, tau)
    v_end = v + a * t_free
    s_new = s + v * t_free + 0.5 * a * t_free ** 2 + v_end * (tau - t_free)
    v_new = np.clip(v_end, 0.0, disc.v_max)
    return s_new, v_new


def factor_samples(n: int) -> tuple[int, int]:
    """Split ``n`` into two factors (v, u) as close to a square as possible."""
    if n < 1:
        raise ValueError("samples_per_cell must be >= 1")
    a = int(math.isqrt(n))
    while n % a:
        a -= 1
    return n // a, a


def _stratified(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


@dataclass(frozen=True, eq=False)
class TransitionMatrices:
    disc: Discretization
    step: sp.csc_matrix
    interval: sp.csc_matrix
    samples_per_cell: int
    n_substeps: int = 10

    def save(self, path) -> None:
        arrays = {}
        for name, mat in (("step", self.step), ("interval", self.interval)):
            arrays[f"{name}_data"] = mat.data
            arrays[f"{name}_indices"] = mat.indices.astype(np.int64)
            arrays[f"{name}_indptr"] = mat.indptr.astype(np.int64)
        header = {"disc": self.disc.to_dict(), "samples_per_cell": self.samples_per_cell,
                  "n_substeps": self.n_substeps}
        write_container(path, MAGIC, header, arrays)

    @classmethod
    def load(cls, path) -> "TransitionMatrices":
        header, arrays = read_container(path, MAGIC)
        disc = Discretization.from_dict(header["disc"])
        n = disc.size
        mats = {}
        for name in ("step", "interval"):
            mats[name] = sp.csc_matrix(
                (arrays[f"{name}_data"], arrays[f"{name}_indices"], arrays[f"{name}_indptr"]), shape=(n, n))
        return cls(disc, mats["step"], mats["interval"], int(header["samples_per_cell"]),
                   int(header["n_substeps"]))


def _kernel_entries(disc: Discretization, samples_per_cell: int, times: np.ndarray):
    """Landing (s offset, v cell) per source (v cell, u cell).

    The mapping is invariant to translation in s, so one kernel per (v, u)
    cell suffices.  Speed and input are sampled on a stratified grid inside
    the cell; the position inside the s cell is uniform and is integrated
    exactly (a shift by ``d`` lands in offset ``floor(d/ds)`` for a fraction
    ``1 - frac(d/ds)`` of the cell, one further otherwise).  Returns
    ``(src_vu, s_off, dst_v, weight)`` aggregated over duplicates.
    """
    k_v, k_u = factor_samples(samples_per_cell)
    fv, fu = np.meshgrid(_stratified(k_v), _stratified(k_u), indexing="ij")
    fv, fu = fv.ravel(), fu.ravel()
    iv, iu = np.meshgrid(np.arange(disc.n_v), np.arange(disc.n_u), indexing="ij")
    iv, iu = iv.ravel(), iu.ravel()
    du = 2.0 / disc.n_u
    v0 = (iv[:, None] + fv[None, :]) * disc.dv
    u0 = -1.0 + (iu[:, None] + fu[None, :]) * du
    src = np.repeat(iv * disc.n_u + iu, len(fv))
    n_samples = len(fv) * len(times)
    srcs, offs, dsts, wts = [], [], [], []
    for t in times:
        shift, v1 = closed_form_step(0.0, v0, u0, disc, tau=float(t))
        x = shift.ravel() / disc.ds
        k0 = np.floor(x + 1e-12)
        frac = np.clip(x - k0, 0.0, 1.0)
        dst_v = np.clip(np.floor(v1 / disc.dv + 1e-12).astype(np.int64), 0, disc.n_v - 1).ravel()
        k0 = k0.astype(np.int64)
        srcs += [src, src]
        offs += [k0, k0 + 1]
        dsts += [dst_v, dst_v]
        wts += [1.0 - frac, frac]
    src = np.concatenate(srcs)
    off = np.concatenate(offs)
    dst_v = np.concatenate(dsts)
    w = np.concatenate(wts)
    keep = w > 0
    src, off, dst_v, w = src[keep], off[keep], dst_v[keep], w[keep]
    max_off = int(off.max()) + 1
    key = (src * max_off + off) * disc.n_v + dst_v
    uniq, inverse = np.unique(key, return_inverse=True)
    weight = np.bincount(inverse, weights=w) / n_samples
    dst_v = uniq % disc.n_v
    off = (uniq // disc.n_v) % max_off
    src = uniq // disc.n_v // max_off
    return src, off, dst_v, weight


def _tile(disc: Discretization, src_vu, off, dst_v, weight) -> sp.csc_matrix:
    n_u = disc.n_u
    i_s = np.arange(disc.n_s)
    src_v, src_u = src_vu // n_u, src_vu % n_u
    dst_s = np.minimum(i_s[:, None] + off[None, :], disc.n_s - 1)  # last s cell absorbs
    cols = ((i_s[:, None] * disc.n_v + src_v[None, :]) * n_u + src_u[None, :]).ravel()
    rows = ((dst_s * disc.n_v + dst_v[None, :]) * n_u + src_u[None, :]).ravel()
    vals = np.broadcast_to(weight[None, :], dst_s.shape).ravel()
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(disc.size, disc.size)).tocsc()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def compute_transition_matrices(disc: Discretization | None = None, samples_per_cell: int = 100,
                                n_substeps: int = 10) -> TransitionMatrices:
    """Cell-to-cell transition matrices from stratified in-cell samples.

    ``step`` maps each sample through one ``tau``; ``interval`` averages the
    cells visited at ``n_substeps`` midpoint times inside the step.  The input
    cell is carried unchanged; the input transition handles it.
    """
    disc = disc or Discretization()
    step = _tile(disc, *_kernel_entries(disc, samples_per_cell, np.array([disc.tau])))
    times = (np.arange(n_substeps) + 0.5) * disc.tau / n_substeps
    interval = _tile(disc, *_kernel_entries(disc, samples_per_cell, times))
    return TransitionMatrices(disc, step, interval, samples_per_cell, n_substeps)


# --------------------------------------------------------------------------
# input transition


def default_psi(n_u: int, self_weight: float = 0.8) -> np.ndarray:
    """Tridiagonal input mixing; doubly stochastic, so its stationary
    distribution is uniform over input cells."""
    side = (1.0 - self_weight) / 2.0
    psi = np.eye(n_u) * self_weight
    idx = np.arange(n_u - 1)
    psi[idx, idx + 1] = side
    psi[idx + 1, idx] = side
    if n_u > 1:
        psi[0, 0] += side
        psi[-1, -1] += side
    else:
        psi[0, 0] = 1.0
    return psi


def build_gamma(psi: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Input transition ``gamma_ij = psi_ij lam_i / sum_i psi_ij lam_i``.

    ``lam`` has shape ``(n_u,)`` (shared by every block) or
    ``(n_blocks, n_u)``.  A column whose denominator vanishes falls back to a
    unit mass on the strongest braking cell (index 0).
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape[-1] != psi.shape[0]:
        raise DimensionMismatchError(f"lambda has {lam.shape[-1]} inputs, psi has {psi.shape[0]}")
    num = psi * lam[..., :, None]
    den = num.sum(axis=-2, keepdims=True)
    dead = den <= 0.0
    gamma = np.divide(num, den, out=np.zeros_like(num), where=~dead)
    if np.any(dead):
        fallback = np.zeros(psi.shape[0])
        fallback[0] = 1.0
        gamma = np.where(dead, fallback[:, None], gamma)
    return gamma


def build_gamma_baseline(psi: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return build_gamma(psi, lam)


def build_gamma_hybrid(psi: np.ndarray, input_masses: np.ndarray) -> np.ndarray:
    """Learned per-step input masses take the place of the priority vector,
    identical for every state."""
    return build_gamma(psi, np.asarray(input_masses, dtype=float))


def apply_gamma(gamma, q: np.ndarray, disc: Discretization) -> np.ndarray:
    """Mix the input cells of every (s, v) block of ``q``.

    ``gamma`` is one ``(n_u, n_u)`` matrix for all blocks, a
    ``(n_blocks, n_u, n_u)`` stack, or a callable mapping the indices of
    blocks that carry mass to their stack of matrices.
    """
    blocks = q.reshape(disc.n_blocks, disc.n_u)
    if callable(gamma):
        active = np.flatnonzero(blocks.sum(axis=1) > 0)
        out = np.zeros_like(blocks)
        if len(active):
            out[active] = np.einsum("bij,bj->bi", gamma(active), blocks[active])
        return out.ravel()
    if gamma.ndim == 2:
        out = blocks @ gamma.T
    else:
        out = np.einsum("bij,bj->bi", gamma, blocks)
    return out.ravel()


def propagate(p: np.ndarray, gamma: np.ndarray, mats: TransitionMatrices) -> tuple[np.ndarray, np.ndarray]:
    """One step: ``(Gamma Step p, Interval p)``."""
    q = mats.step @ p
    p_next = apply_gamma(gamma, q, mats.disc)
    total = p_next.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NormalizationDriftError(f"propagated mass {total:.9f} drifted from 1")
    return p_next, mats.interval @ p


# --------------------------------------------------------------------------
# distributions


def _split(value: float, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices and weights of the two neighbouring centres whose weighted
    mean is ``value`` (clamped to the outer centres)."""
    value = float(np.clip(value, centers[0], centers[-1]))
    hi = int(np.clip(np.searchsorted(centers, value), 1, len(centers) - 1)) if len(centers) > 1 else 0
    if len(centers) == 1:
        return np.array([0]), np.array([1.0])
    lo = hi - 1
    w_hi = (value - centers[lo]) / (centers[hi] - centers[lo])
    return np.array([lo, hi]), np.array([1.0 - w_hi, w_hi])


def initial_distribution(disc: Discretization, v: float, a: float = 0.0) -> np.ndarray:
    """Unit mass in s cell 0 with speed and input split between neighbouring
    cell centres so that their means equal ``v`` and ``a``."""
    p = np.zeros(disc.size)
    iv, wv = _split(v, disc.v_centers)
    iu, wu = _split(a, disc.accel_centers)
    for i, w1 in zip(iv, wv):
        for j, w2 in zip(iu, wu):
            p[i * disc.n_u + j] += w1 * w2
    return p


def s_marginal(p: np.ndarray, disc: Discretization) -> np.ndarray:
    return p.reshape(disc.n_s, disc.n_v * disc.n_u).sum(axis=1)


def v_marginal(p: np.ndarray, disc: Discretization) -> np.ndarray:
    return p.reshape(disc.n_s, disc.n_v, disc.n_u).sum(axis=(0, 2))


def mean_displacement(p: np.ndarray, disc: Discretization) -> float:
    """Mean distance travelled from the centre of s cell 0."""
    m = s_marginal(p, disc)
    return float(m @ (np.arange(disc.n_s) * disc.ds) / m.sum())


def mean_speed(p: np.ndarray, disc: Discretization) -> float:
    m = v_marginal(p, disc)
    return float(m @ disc.v_centers / m.sum())


# --------------------------------------------------------------------------
# priority vectors


def curve_speed_profile(s: np.ndarray, curvature: np.ndarray, speed_limit: np.ndarray,
                        a_lat: float = 2.0, b_comf: float = 2.0) -> np.ndarray:
    """Highest speed at each ``s`` from which the vehicle can still slow down
    (at ``b_comf``) to respect speed limits and ``sqrt(a_lat/|k|)`` ahead."""
    local = np.minimum(np.sqrt(a_lat / np.maximum(np.abs(curvature), 1e-6)), speed_limit)
    out = np.empty_like(local)
    best = np.inf
    for i in range(len(s) - 1, -1, -1):
        if i < len(s) - 1:
            best = math.sqrt(best ** 2 + 2 * b_comf * (s[i + 1] - s[i])) if np.isfinite(best) else best
        best = min(best, local[i])
        out[i] = best
    return out


def layout_lambda(disc: Discretization, speed_cap: np.ndarray) -> np.ndarray:
    """``(n_blocks, n_u)`` mask removing inputs whose next-step speed from the
    block's centre exceeds ``speed_cap`` of the block's s cell."""
    v = disc.v_centers
    u = 0.5 * (disc.u_edges[:-1] + disc.u_edges[1:])
    _, v_next = closed_form_step(0.0, v[:, None], u[None, :], disc)
    cap = np.asarray(speed_cap, dtype=float)[:, None, None]
    ok = (v_next[None, :, :] <= cap + 1e-9) | (v_next[None, :, :] <= v[None, :, None])
    return ok.reshape(disc.n_blocks, disc.n_u).astype(float)


def conflict_half_window(length: float, margin: float = 1.0, lane_half_width: float = 1.75) -> float:
    """Half extent of the conflict zone in arc length: half the occupied
    length (body plus margin) plus half the crossing lane."""
    return 0.5 * (length + margin) + lane_half_width


def committed_mask(disc: Discretization, blocks: np.ndarray, conflict: float, half: float,
                   n_sub: int = 11) -> np.ndarray:
    """``(len(blocks), n_u)``: applying input cell ``u`` from the front edge of the block
    leaves the vehicle unable to stop before the conflict window, while not
    past it, at some time in the coming step.  Blocks already in that state
    at the start keep only the hardest braking cell free."""
    i_s, i_v = blocks // disc.n_v, blocks % disc.n_v
    s0 = disc.s_centers[i_s][:, None] + 0.5 * disc.ds  # front edge of the cell
    v0 = disc.v_centers[i_v][:, None]
    u = 0.5 * (disc.u_edges[:-1] + disc.u_edges[1:])
    times = np.linspace(0.0, disc.tau, n_sub)
    s_all = []
    v_all = []
    for t in times:
        s1, v1 = closed_form_step(s0, v0, u[None, :], disc, tau=float(t))
        s_all.append(s1)
        v_all.append(v1)
    s_t = np.stack(s_all, axis=-1)
    v_t = np.stack(v_all, axis=-1)
    inside = (s_t + v_t ** 2 / (2 * STOP_DECEL) >= conflict - half) & (s_t <= conflict + half)
    out = inside[:, :, 1:].any(axis=2)
    already = inside[:, 0, 0]
    out[already, 0] = False
    out[already, 1:] = True
    return out


def threat_mask(disc: Discretization, cells: np.ndarray, conflict: float, half: float,
                t_gap: float = 2.0) -> np.ndarray:
    """Joint cells of the blocking chain that have not cleared the conflict
    window and reach it within ``t_gap`` at their current speed."""
    blocks = cells // disc.n_u
    s = disc.s_centers[blocks // disc.n_v]
    v = disc.v_centers[blocks % disc.n_v]
    return (s <= conflict + half) & (s + v * t_gap >= conflict - half)


def interaction_matrix(disc: Discretization, dep_blocks: np.ndarray, dep_conflict: float, dep_half: float,
                       blk_cells: np.ndarray, blk_conflict: float, blk_half: float,
                       t_gap: float = 2.0) -> np.ndarray:
    """Dense collision indicator between dependent (block, input) rows and
    blocking joint-cell columns: both occupy the conflict window at once."""
    dep = committed_mask(disc, dep_blocks, dep_conflict, dep_half).reshape(-1)
    blk = threat_mask(disc, blk_cells, blk_conflict, blk_half, t_gap)
    return np.logical_and(dep[:, None], blk[None, :]).astype(float)


def interaction_lambda(interaction: np.ndarray, p_blocking: np.ndarray, n_u: int) -> np.ndarray:
    """``1 - I p_B``, clipped to [0, 1], reshaped to ``(rows, n_u)``."""
    if interaction.shape[1] != len(p_blocking):
        raise DimensionMismatchError(
            f"interaction matrix has {interaction.shape[1]} columns, blocking vector {len(p_blocking)}")
    lam = np.clip(1.0 - interaction @ p_blocking, 0.0, 1.0)
    return lam.reshape(-1, n_u)
