import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iamp.corridors import NoMatchingLaneletError, curvature_features, enumerate_corridors, match_lanelets
from iamp.map_model import map_from_dict
from iamp.scenarios import crossing_map, fork_map, roundabout_map, straight_map


def _dfs_paths(lmap, lid, need):
    """Independent enumeration: extend until the accumulated length covers
    ``need`` or the graph ends."""
    out = []
    stack = [((lid,), lmap[lid].length)]
    while stack:
        path, length = stack.pop()
        succ = lmap[path[-1]].successors
        if length >= need or not succ:
            out.append(path)
            continue
        for s in succ:
            stack.append((path + (s,), length + lmap[s].length))
    return sorted(out)


def test_fork_has_two_corridors():
    lmap = fork_map()
    cs = enumerate_corridors(lmap, (40.0, 0.0, 0.0), 10.0, vehicle_id=1, first_id=100)
    assert sorted(c.lanelet_seq for c in cs) == [(1, 2), (1, 3)]
    assert [c.id for c in cs] == [100, 101]
    for c in cs:
        assert c.start_s == pytest.approx(40.0)
        assert c.vehicle_id == 1


def test_far_from_branch_single_corridor():
    lmap = straight_map()
    cs = enumerate_corridors(lmap, (5.0, 0.0, 0.0), 5.0)
    # 4 s at 5 m/s plus 2 m/s^2 headroom: 36 m, stays on lanelet 1 + 2
    assert [c.lanelet_seq for c in cs] == [(1,)]


@given(st.floats(2.0, 78.0), st.floats(0.0, 14.0))
def test_crossing_matches_dfs_oracle(y_back, v):
    lmap = crossing_map()
    pose = (1.75, -7.0 - y_back, math.pi / 2)
    cs = enumerate_corridors(lmap, pose, v, lane_changes=False)
    s0 = 80.0 - y_back
    need = s0 + v * 4.0 + 0.5 * 2.0 * 16.0
    assert sorted(c.lanelet_seq for c in cs) == _dfs_paths(lmap, 10, need)
    for c in cs:
        assert c.centerline.length <= need + 1e-6
        np.testing.assert_allclose(c.centerline.point_at(c.start_s), pose[:2], atol=1e-6)


def test_roundabout_circulating_corridors():
    lmap = roundabout_map()
    ring = lmap[200]
    mid = 0.5 * ring.length
    p = ring.centerline.point_at(mid)
    h = float(ring.centerline.heading_at(mid))
    cs = enumerate_corridors(lmap, (p[0], p[1], h), 8.0)
    for c in cs:
        assert c.lanelet_seq[0] == 200
        for a, b in zip(c.lanelet_seq, c.lanelet_seq[1:]):
            assert b in lmap[a].successors


def test_lane_change_alternative():
    lanes = [
        {"id": 1, "left": [[0, 1.75], [100, 1.75]], "right": [[0, -1.75], [100, -1.75]], "adj_left": 2},
        {"id": 2, "left": [[0, 5.25], [100, 5.25]], "right": [[0, 1.75], [100, 1.75]], "adj_right": 1},
    ]
    lmap = map_from_dict({"lanelets": lanes})
    with_lc = enumerate_corridors(lmap, (10.0, 0.0, 0.0), 8.0)
    assert sorted(c.lanelet_seq for c in with_lc) == [(1,), (1, 2)]
    lc = next(c for c in with_lc if c.lanelet_seq == (1, 2))
    np.testing.assert_allclose(lc.centerline.point_at(lc.start_s), [10.0, 3.5], atol=1e-6)
    without = enumerate_corridors(lmap, (10.0, 0.0, 0.0), 8.0, lane_changes=False)
    assert [c.lanelet_seq for c in without] == [(1,)]


def test_no_matching_lanelet():
    with pytest.raises(NoMatchingLaneletError):
        enumerate_corridors(straight_map(), (10.0, 30.0, 0.0), 5.0)
    # wrong-way vehicles do not match either
    with pytest.raises(NoMatchingLaneletError):
        enumerate_corridors(straight_map(), (10.0, 0.0, math.pi), 5.0)


def test_joint_assigned_to_upstream_lanelet():
    m = match_lanelets(straight_map(), (50.0, 0.0, 0.0))
    assert [lid for lid, _, _ in m] == [1]


def test_curvature_features_circle_arc():
    # fork branch 3 is a quarter circle of radius 30 turning right
    lmap = fork_map()
    c = next(c for c in enumerate_corridors(lmap, (58.0, 0.0, 0.0), 10.0) if c.lanelet_seq == (1, 3))
    f = curvature_features(c)
    assert f.shape == (12,)
    assert np.all(f >= 0)
    # right turn: negative curvature only; integral of |k| over the arc is the turn angle
    assert f[:6].sum() == pytest.approx(0.0, abs=1e-3)
    ahead_end = c.length
    arc_end = 2.0 + 30 * math.pi / 2
    expected = min(arc_end, ahead_end - 58.0) - 2.0
    assert f[6:].sum() == pytest.approx(expected / 30.0, rel=0.03)


def test_straight_has_zero_curvature_features():
    c = enumerate_corridors(straight_map(), (5.0, 0.0, 0.0), 10.0)[0]
    np.testing.assert_allclose(curvature_features(c), 0.0, atol=1e-9)
