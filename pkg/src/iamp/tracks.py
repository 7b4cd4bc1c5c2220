"""Track recordings: CSV ingestion, resampling to the 0.1 s grid, export.

CSV columns (header required)::

    recording_id,track_id,frame,x,y,heading,v,a,length,width

``a`` is optional.  A sidecar ``<name>.json`` next to the CSV holds
``{"frame_rate": <Hz>}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DT = 0.1
REQUIRED_COLUMNS = ("recording_id", "track_id", "frame", "x", "y", "heading", "v", "length", "width")
_ALL_COLUMNS = REQUIRED_COLUMNS[:6] + ("v", "a") + REQUIRED_COLUMNS[7:]


class TrackSchemaError(ValueError):
    pass


class NonMonotoneFramesError(ValueError):
    pass


@dataclass
class Track:
    track_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    v: np.ndarray
    a: np.ndarray
    length: float = 4.5
    width: float = 1.8

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def covers(self, t: float, eps: float = 1e-6) -> bool:
        return self.t[0] - eps <= t <= self.t[-1] + eps

    def index(self, t: float) -> int:
        return int(round((t - self.t[0]) / DT))

    def sample(self, t) -> dict:
        """Linearly interpolated state at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        heading = np.interp(t, self.t, np.unwrap(self.heading))
        return {
            "x": np.interp(t, self.t, self.x),
            "y": np.interp(t, self.t, self.y),
            "heading": heading,
            "v": np.interp(t, self.t, self.v),
            "a": np.interp(t, self.t, self.a),
        }

    def travelled(self) -> np.ndarray:
        """Cumulative path length along the recorded positions."""
        step = np.hypot(np.diff(self.x), np.diff(self.y))
        return np.concatenate([[0.0], np.cumsum(step)])


@dataclass
class Recording:
    recording_id: int
    frame_rate: float
    tracks: dict[int, Track]
    meta: dict = field(default_factory=dict)

    @property
    def t_start(self) -> float:
        return min(tr.t_start for tr in self.tracks.values())

    @property
    def t_end(self) -> float:
        return max(tr.t_end for tr in self.tracks.values())


@dataclass
class TrackDataset:
    recordings: list[Recording]


def _grid(t0: float, t1: float) -> np.ndarray:
    k0 = math.ceil(t0 / DT - 1e-9)
    k1 = math.floor(t1 / DT + 1e-9)
    return np.arange(k0, k1 + 1) * DT


def resample_track(track_id, t, x, y, heading, v, a=None, length=4.5, width=1.8) -> Track:
    """Resample raw samples to absolute multiples of ``DT``.

    Missing accelerations are recomputed by central differences of speed.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise NonMonotoneFramesError(f"track {track_id}: frames must be strictly increasing")
    grid = _grid(t[0], t[-1])
    if len(grid) == 0:
        grid = np.array([t[0]])
    vs = np.interp(grid, t, v)
    if a is None:
        acc = np.gradient(vs, DT) if len(vs) > 1 else np.zeros_like(vs)
    else:
        acc = np.interp(grid, t, a)
    return Track(
        track_id=int(track_id), t=np.round(grid, 10),
        x=np.interp(grid, t, x), y=np.interp(grid, t, y),
        heading=np.interp(grid, t, np.unwrap(np.asarray(heading, dtype=float))),
        v=vs, a=acc, length=float(length), width=float(width),
    )


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def ingest_tracks(path) -> TrackDataset:
    path = Path(path)
    meta_path = _sidecar(path)
    if not meta_path.exists():
        raise TrackSchemaError(f"missing sidecar {meta_path.name} with frame_rate")
    meta = json.loads(meta_path.read_text())
    frame_rate = float(meta.get("frame_rate", 0))
    if frame_rate <= 0:
        raise TrackSchemaError("frame_rate must be positive")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in cols:
                raise TrackSchemaError(f"missing column {col!r}")
        has_a = "a" in cols
        rows = list(reader)
    grouped: dict[tuple[int, int], list[dict]] = {}
    for row in rows:
        grouped.setdefault((int(row["recording_id"]), int(row["track_id"])), []).append(row)
    recordings: dict[int, dict[int, Track]] = {}
    for (rid, tid), items in sorted(grouped.items()):
        frames = np.array([float(r["frame"]) for r in items])
        col = {k: np.array([float(r[k]) for r in items]) for k in ("x", "y", "heading", "v")}
        acc = np.array([float(r["a"]) for r in items]) if has_a else None
        recordings.setdefault(rid, {})[tid] = resample_track(
            tid, frames / frame_rate, col["x"], col["y"], col["heading"], col["v"], acc,
            float(items[0]["length"]), float(items[0]["width"]))
    extra = meta.get("meta", {})
    return TrackDataset([Recording(rid, frame_rate, tracks, dict(extra.get(str(rid), {})))
                         for rid, tracks in sorted(recordings.items())])


def write_tracks(dataset: TrackDataset, path, frame_rate: float = 1.0 / DT) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_ALL_COLUMNS)
        for rec in dataset.recordings:
            for tid in sorted(rec.tracks):
                tr = rec.tracks[tid]
                for i in range(len(tr.t)):
                    w.writerow([rec.recording_id, tid, int(round(tr.t[i] * frame_rate)),
                                f"{tr.x[i]:.6f}", f"{tr.y[i]:.6f}", f"{tr.heading[i]:.6f}",
                                f"{tr.v[i]:.6f}", f"{tr.a[i]:.6f}", tr.length, tr.width])
    meta = {"frame_rate": frame_rate,
            "meta": {str(r.recording_id): r.meta for r in dataset.recordings if r.meta}}
    _sidecar(path).write_text(json.dumps(meta, indent=1))
