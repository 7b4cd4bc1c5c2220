"""Linear autoregressive acceleration model.

Input: a 4 s history sampled every 0.4 s (10 steps) of 22 features each,
laid out ``[step][feature]`` with the oldest step first.  Output: 40
accelerations covering the next 4 s at 0.1 s.  The model is
``y = W x_norm + b`` with per-feature min-max normalization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .binio import read_container, write_container
from .corridors import Corridor, curvature_features
from .markov import Discretization

MAGIC = b"IAMPAR01"
HISTORY_STEPS = 10
HISTORY_DT = 0.4
HORIZON_SAMPLES = 40
SAMPLE_DT = 0.1
N_GROUPS = 10
SENTINEL_DISTANCE = 100.0
SIGMA_FLOOR = 0.25
A_MIN, A_MAX = -3.0, 2.0

STEP_FEATURES = (
    ["a_in", "d_lead", "v_lead", "d_int_target"]
    + [f"kp{i}" for i in range(1, 7)] + [f"kn{i}" for i in range(1, 7)]
    + [f"{name}{j}" for j in (1, 2) for name in ("d_int", "v_int", "p_int")]
)
N_STEP_FEATURES = len(STEP_FEATURES)
N_FEATURES = N_STEP_FEATURES * HISTORY_STEPS


class InsufficientHistoryError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


def feature_names() -> list[str]:
    lag = [round((HISTORY_STEPS - 1 - k) * HISTORY_DT, 1) for k in range(HISTORY_STEPS)]
    return [f"x_{name}_t-{lag[k]}" for k in range(HISTORY_STEPS) for name in STEP_FEATURES]


def target_names() -> list[str]:
    return [f"y_{i}" for i in range(HORIZON_SAMPLES)]


def history_times(t: float) -> np.ndarray:
    return t - HISTORY_DT * np.arange(HISTORY_STEPS - 1, -1, -1)


# --------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class OtherVehicle:
    """Current relation to another vehicle plus its recorded motion."""
    d: float          # gap now (leader) or distance to the intersection (influencer)
    travelled: np.ndarray  # distance travelled at each history time, relative to now (<= 0)
    speed: np.ndarray      # speed at each history time
    priority: int = 0


def extract_features(accel: np.ndarray, speed: np.ndarray, travelled: np.ndarray, corridor: Corridor | None,
                     d_int: float | None = None, leader: OtherVehicle | None = None,
                     influencers: tuple[OtherVehicle, ...] = ()) -> np.ndarray:
    """Feature vector for one target vehicle at the latest history time.

    ``accel``, ``speed`` and ``travelled`` hold the target's values at the 10
    history times; ``travelled`` is measured relative to now (last entry 0).
    Distances at earlier times are reconstructed from current distances and
    distances travelled since.  Curvature comes from ``corridor`` ahead of
    the vehicle and is repeated across the history.
    """
    accel, speed, travelled = (np.asarray(a, dtype=float) for a in (accel, speed, travelled))
    if not (len(accel) == len(speed) == len(travelled) == HISTORY_STEPS):
        raise InsufficientHistoryError(f"need {HISTORY_STEPS} history samples, got {len(accel)}")
    back = -travelled  # distance the target still had to cover to reach its current position
    x = np.zeros((HISTORY_STEPS, N_STEP_FEATURES))
    x[:, 0] = accel
    if leader is None:
        x[:, 1] = SENTINEL_DISTANCE
        x[:, 2] = speed
    else:
        x[:, 1] = leader.d + back - (-leader.travelled)
        x[:, 2] = leader.speed
    x[:, 3] = SENTINEL_DISTANCE if d_int is None else d_int + back
    if corridor is not None:
        x[:, 4:16] = curvature_features(corridor)[None, :]
    for j in range(2):
        col = 16 + 3 * j
        if j < len(influencers):
            inf = influencers[j]
            x[:, col] = inf.d + (-inf.travelled)
            x[:, col + 1] = inf.speed
            x[:, col + 2] = inf.priority
        else:
            x[:, col] = SENTINEL_DISTANCE
            x[:, col + 1] = 0.0
            x[:, col + 2] = 0.0
    for col in (1, 3, 16, 19):
        x[:, col] = np.clip(x[:, col], 0.0, SENTINEL_DISTANCE)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature values")
    return x.ravel()


# --------------------------------------------------------------------------
# model


@dataclass
class ARModel:
    W: np.ndarray
    b: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        out, inp = self.W.shape
        if self.b.shape != (out,) or self.x_min.shape != (inp,) or self.x_max.shape != (inp,):
            raise DimensionMismatchError("inconsistent model dimensions")
        if np.any(self.x_max <= self.x_min):
            raise ValueError("normalization ranges need max > min")

    @property
    def n_inputs(self) -> int:
        return self.W.shape[1]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_min) / (self.x_max - self.x_min)

    def save(self, path) -> None:
        write_container(path, MAGIC, {"meta": self.meta},
                        {"W": self.W, "b": self.b, "x_min": self.x_min, "x_max": self.x_max})

    @classmethod
    def load(cls, path) -> "ARModel":
        header, arr = read_container(path, MAGIC)
        return cls(arr["W"], arr["b"], arr["x_min"], arr["x_max"], header.get("meta", {}))


def infer(model: ARModel, x: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Acceleration profile(s) for one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.n_inputs:
        raise DimensionMismatchError(f"model expects {model.n_inputs} features, got {x.shape[-1]}")
    y = model.normalize(x) @ model.W.T + model.b
    return np.clip(y, A_MIN, A_MAX) if clamp else y


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.01
    lr_min: float = 1e-4
    restart_every: int = 10
    restart_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


def cosine_lr(epoch_pos: float, cfg: TrainConfig) -> float:
    """Learning rate at fractional epoch ``epoch_pos``.

    Cosine annealing from the peak to ``lr_min`` that restarts every
    ``restart_every`` epochs; each restart peak is ``restart_decay`` times
    the previous one.
    """
    cycle = int(epoch_pos // cfg.restart_every)
    phase = (epoch_pos % cfg.restart_every) / cfg.restart_every
    peak = max(cfg.lr * cfg.restart_decay ** cycle, cfg.lr_min)
    return cfg.lr_min + 0.5 * (peak - cfg.lr_min) * (1.0 + math.cos(math.pi * phase))


def combined_loss(pred: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE + MAE and its gradient with respect to ``pred``."""
    r = pred - y
    n = r.size
    loss = float(np.mean(r ** 2) + np.mean(np.abs(r)))
    grad = (2.0 * r + np.sign(r)) / n
    return loss, grad


def fit_ranges(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return lo, hi


def train(X: np.ndarray, Y: np.ndarray, config: TrainConfig | None = None) -> ARModel:
    """Fit ``W`` and ``b`` with Adam on MSE + MAE over mini-batches."""
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y) or len(X) == 0:
        raise DimensionMismatchError("X and Y must be non-empty 2-D arrays with equal row counts")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("training data must be finite")
    lo, hi = fit_ranges(X)
    Xn = (X - lo) / (hi - lo)
    n, d = Xn.shape
    k = Y.shape[1]
    rng = np.random.default_rng(cfg.seed)
    W = np.zeros((k, d))
    b = np.zeros(k)
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    step = 0
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi in range(n_batches):
            idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            xb, yb = Xn[idx], Y[idx]
            pred = xb @ W.T + b
            loss, g = combined_loss(pred, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}")
            total += loss * len(idx)
            gW = g.T @ xb
            gb = g.sum(axis=0)
            step += 1
            lr = cosine_lr(epoch + bi / n_batches, cfg)
            for p, gp, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
                m *= cfg.beta1
                m += (1 - cfg.beta1) * gp
                v *= cfg.beta2
                v += (1 - cfg.beta2) * gp ** 2
                mhat = m / (1 - cfg.beta1 ** step)
                vhat = v / (1 - cfg.beta2 ** step)
                p -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
        losses.append(total / n)
        if not math.isfinite(losses[-1]):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}")
    meta = {"epochs": cfg.epochs, "seed": cfg.seed, "losses": losses, "n_samples": n}
    return ARModel(W, b, lo, hi, meta)


# --------------------------------------------------------------------------
# profile to input distributions


@dataclass(frozen=True)
class AccelDistribution:
    means: np.ndarray   # (10,)
    stds: np.ndarray    # (10,)
    masses: np.ndarray  # (10, n_u)


def profile_to_distributions(profile: np.ndarray, disc: Discretization | None = None,
                             sigma_floor: float = SIGMA_FLOOR) -> AccelDistribution:
    """Ten normal distributions, one per 0.4 s group of four samples, turned
    into masses over the input cells and renormalized over [-3, 2] m/s^2."""
    disc = disc or Discretization()
    profile = np.asarray(profile, dtype=float)
    if profile.shape != (HORIZON_SAMPLES,):
        raise DimensionMismatchError(f"profile must have {HORIZON_SAMPLES} values")
    groups = profile.reshape(N_GROUPS, HORIZON_SAMPLES // N_GROUPS)
    mu = groups.mean(axis=1)
    sd = np.maximum(groups.std(axis=1), sigma_floor)
    edges = disc.accel_edges
    cdf = norm.cdf((edges[None, :] - mu[:, None]) / sd[:, None])
    mass = np.diff(cdf, axis=1)
    total = mass.sum(axis=1, keepdims=True)
    mass = np.where(total > 0, mass / np.where(total > 0, total, 1.0), 0.0)
    # a mean far outside the input range: all mass on the nearest cell
    dead = total[:, 0] <= 0
    if np.any(dead):
        mass[dead] = 0.0
        mass[dead & (mu < 0), 0] = 1.0
        mass[dead & (mu >= 0), -1] = 1.0
    return AccelDistribution(mu, sd, mass)


# --------------------------------------------------------------------------
# dataset CSV


def write_dataset(path, X: np.ndarray, Y: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feature_names() + target_names())
        for x, y in zip(X, Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def read_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty dataset")
        expected = feature_names() + target_names()
        if header != expected:
            raise ValueError(f"{path}: header must list {N_FEATURES} feature and {HORIZON_SAMPLES} target columns")
        rows = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, len(expected))
    return rows[:, :N_FEATURES], rows[:, N_FEATURES:]
