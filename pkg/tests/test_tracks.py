import csv
import json

import numpy as np
import pytest

from iamp.tracks import (DT, NonMonotoneFramesError, Recording, TrackDataset, TrackSchemaError, ingest_tracks,
                         resample_track, write_tracks)

HEADER = ["recording_id", "track_id", "frame", "x", "y", "heading", "v", "a", "length", "width"]


def _write(path, rows, frame_rate=25.0, header=HEADER):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    path.with_suffix(".json").write_text(json.dumps({"frame_rate": frame_rate}))


def test_two_row_track_resampled(tmp_path):
    path = tmp_path / "t.csv"
    # frames 0 and 25 at 25 Hz: t = 0 and 1 s
    _write(path, [[0, 1, 0, 0.0, 0.0, 0.0, 10.0, 0.0, 4.5, 1.8],
                  [0, 1, 25, 10.0, 2.0, 0.0, 10.0, 0.0, 4.5, 1.8]])
    tr = ingest_tracks(path).recordings[0].tracks[1]
    np.testing.assert_allclose(tr.t, np.arange(11) * DT)
    np.testing.assert_allclose(tr.x, np.linspace(0, 10, 11))
    np.testing.assert_allclose(tr.y, np.linspace(0, 2, 11))
    assert (tr.x[0], tr.x[-1]) == (0.0, 10.0)


def test_missing_accel_recomputed_constant_speed(tmp_path):
    path = tmp_path / "t.csv"
    header = [h for h in HEADER if h != "a"]
    rows = [[0, 1, f, f * 0.4, 0.0, 0.0, 10.0, 4.5, 1.8] for f in range(0, 101)]
    _write(path, rows, header=header)
    tr = ingest_tracks(path).recordings[0].tracks[1]
    np.testing.assert_allclose(tr.a, 0.0, atol=1e-12)


def test_sine_speed_derivative():
    # v = 10 + 2 sin(t): recomputed acceleration matches 2 cos(t)
    t = np.arange(0, 10.0001, 0.04)
    v = 10 + 2 * np.sin(t)
    tr = resample_track(1, t, np.cumsum(v) * 0.04, np.zeros_like(t), np.zeros_like(t), v)
    interior = slice(1, -1)
    np.testing.assert_allclose(tr.a[interior], 2 * np.cos(tr.t[interior]), atol=0.05)


def test_schema_errors(tmp_path):
    path = tmp_path / "t.csv"
    _write(path, [[0, 1, 0, 0, 0, 0, 1]], header=HEADER[:7])
    with pytest.raises(TrackSchemaError, match="length"):
        ingest_tracks(path)
    path2 = tmp_path / "u.csv"
    path2.write_text(",".join(HEADER) + "\n")
    with pytest.raises(TrackSchemaError, match="sidecar"):
        ingest_tracks(path2)


def test_non_monotone_frames(tmp_path):
    path = tmp_path / "t.csv"
    _write(path, [[0, 1, 5, 0, 0, 0, 1, 0, 4.5, 1.8], [0, 1, 3, 1, 0, 0, 1, 0, 4.5, 1.8]])
    with pytest.raises(NonMonotoneFramesError):
        ingest_tracks(path)


def test_write_ingest_round_trip(tmp_path):
    t = np.arange(0, 3.0001, DT)
    tr = resample_track(7, t, 2 * t, t ** 2, 0.1 * t, 2 + 0 * t, a=0 * t, length=4.0, width=1.9)
    ds = TrackDataset([Recording(3, 10.0, {7: tr}, {"scenario": "x"})])
    path = tmp_path / "r.csv"
    write_tracks(ds, path)
    back = ingest_tracks(path)
    rec = back.recordings[0]
    assert rec.recording_id == 3 and rec.meta == {"scenario": "x"}
    tr2 = rec.tracks[7]
    np.testing.assert_allclose(tr2.t, tr.t)
    np.testing.assert_allclose(tr2.x, tr.x, atol=1e-6)
    np.testing.assert_allclose(tr2.y, tr.y, atol=1e-6)
    assert (tr2.length, tr2.width) == (4.0, 1.9)


def test_track_sampling():
    t = np.arange(0, 2.0001, DT)
    tr = resample_track(1, t, 5 * t, 0 * t, 0 * t, 5 + 0 * t)
    assert tr.covers(1.0) and not tr.covers(2.5)
    assert tr.index(1.0) == 10
    assert tr.sample(0.55)["x"] == pytest.approx(2.75)
    np.testing.assert_allclose(tr.travelled()[-1], 10.0)
