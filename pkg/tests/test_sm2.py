import math
import sys

import numpy as np
import pytest
from scipy.spatial import cKDTree

from cbgl.grid_map import FREE, OCCUPIED, OccupancyGrid
from cbgl.pose import Pose, wrap_angle
from cbgl.scan_geometry import NotInFreeSpaceError, RangeScan, scan_map, simulate_measurement
from cbgl.sm2 import (
    IcpConfig,
    InsufficientPointsError,
    _point_to_line,
    _target_lines,
    relative_delta,
    scan_match,
    scan_to_points,
    sm2,
)

TWO_PI = 2 * math.pi


def err(a, b):
    return math.hypot(a.x - b.x, a.y - b.y), abs(wrap_angle(a.theta - b.theta))


class TestScanToPoints:
    def test_single_ray(self):
        s = RangeScan(TWO_PI, 10.0, [5.0, 2.0])  # bearings -pi, 0
        np.testing.assert_allclose(scan_to_points(s)[1], [2.0, 0.0])

    def test_all_clamped(self):
        assert scan_to_points(RangeScan(TWO_PI, 3.0, [3.0] * 8)).shape == (0, 2)

    def test_rotation(self):
        s = RangeScan(TWO_PI, 10.0, [5.0, 1.0])
        np.testing.assert_allclose(scan_to_points(s, Pose(0, 0, math.pi / 2))[1], [0.0, 1.0], atol=1e-15)


class TestIcpConfig:
    @pytest.mark.parametrize("kw", [
        dict(max_iterations=0),
        dict(translation_epsilon=0.0),
        dict(rotation_epsilon=-1.0),
        dict(max_correspondence_distance=0.0),
        dict(outlier_trim_ratio=0.6),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            IcpConfig(**kw)


class TestScanMatch:
    def test_identity(self, square_room, centre):
        s = scan_map(square_room, Pose(1.2, 2.5, 0.4), 360, TWO_PI, 10.0)
        r = scan_match(s, s)
        assert max(abs(v) for v in r.delta) <= 1e-6
        assert r.converged

    def test_translation(self, square_room):
        p = Pose(1.8, 2.1, 0.0)
        s_r = scan_map(square_room, Pose(1.9, 2.1, 0.0), 360, TWO_PI, 10.0)
        s_v = scan_map(square_room, p, 360, TWO_PI, 10.0)
        dx, dy, dth = scan_match(s_r, s_v).delta
        assert dx == pytest.approx(0.1, abs=0.02)

    def test_translation_and_rotation(self, square_room):
        p = Pose(1.8, 2.1, 0.0)
        truth = p.compose((0.2, -0.1, 0.1))
        s_r = scan_map(square_room, truth, 360, TWO_PI, 10.0)
        s_v = scan_map(square_room, p, 360, TWO_PI, 10.0)
        dx, dy, dth = scan_match(s_r, s_v).delta
        assert dx == pytest.approx(0.2, abs=0.03)
        assert dy == pytest.approx(-0.1, abs=0.03)
        assert dth == pytest.approx(0.1, abs=0.02)

    def test_too_few_points(self):
        s = RangeScan(TWO_PI, 10.0, [1.0] * 5 + [10.0] * 30)
        with pytest.raises(InsufficientPointsError):
            scan_match(s, s)

    def test_circle_residual_rotation_invariant(self):
        # concentric circles: any rotation aligns equally well
        a = RangeScan(TWO_PI, 10.0, np.full(360, 2.0))
        b = RangeScan(TWO_PI, 10.0, np.full(360, 2.1))
        r = scan_match(a, b)
        assert r.residual == pytest.approx(0.1, abs=0.03)
        src, tgt = scan_to_points(a), scan_to_points(b)
        mate, mate_dist = _target_lines(tgt, True)
        tree = cKDTree(tgt)
        trans = np.array(r.delta[:2])
        vals = []
        for th in (r.delta[2], r.delta[2] + 0.7, r.delta[2] - 2.0):
            rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
            _, _, e = _point_to_line(src, rot, trans, tgt, tree, mate, mate_dist, 1.0)
            vals.append(np.mean(np.abs(e)))
        assert vals[0] == pytest.approx(r.residual, abs=1e-12)
        np.testing.assert_allclose(vals, vals[0], atol=1e-3)


class TestSm2:
    def test_at_truth(self, square_room):
        p = Pose(1.4, 2.6, -1.0)
        m = sm2(scan_map(square_room, p, 360, TWO_PI, 10.0), square_room, p)
        dl, dth = err(m.corrected_pose, p)
        assert dl <= 1e-3 and dth <= 1e-3

    def test_offset_hypothesis(self, square_room, centre):
        s = scan_map(square_room, centre, 360, TWO_PI, 10.0)
        h = Pose(centre.x + 0.3 * math.cos(1.0), centre.y + 0.3 * math.sin(1.0), centre.theta)
        m = sm2(s, square_room, h)
        assert err(m.corrected_pose, centre)[0] <= 0.05

    def test_compose_identity(self, square_room, centre, rng):
        s = simulate_measurement(square_room, centre, 360, TWO_PI, 10.0, 0.05, rng)
        h = Pose(2.2, 1.9, 0.1)
        m = sm2(s, square_room, h)
        assert h.compose(m.delta) == m.corrected_pose

    def test_compose_identity_multi_pass(self, square_room, centre):
        s = scan_map(square_room, centre, 360, TWO_PI, 10.0)
        h = Pose(2.2, 1.9, 0.1)
        m = sm2(s, square_room, h, passes=3)
        c = h.compose(m.delta)
        assert err(c, m.corrected_pose)[0] < 1e-12
        assert relative_delta(h, m.corrected_pose) == pytest.approx(m.delta)

    def test_idempotent_at_fixpoint(self, square_room, rng):
        truth = Pose(1.3, 1.1, 2.0)
        s = simulate_measurement(square_room, truth, 360, TWO_PI, 10.0, 0.05, rng)
        cfg = IcpConfig()
        m1 = sm2(s, square_room, Pose(1.4, 1.0, 1.9), cfg)
        m2 = sm2(s, square_room, m1.corrected_pose, cfg)
        dl, dth = err(m1.corrected_pose, m2.corrected_pose)
        # one cast-and-match round from the fixpoint; map-scans are re-cast on the grid
        assert dl < 10 * cfg.translation_epsilon and dth < 10 * cfg.rotation_epsilon

    def test_not_free(self, square_room, centre):
        s = scan_map(square_room, centre, 36, TWO_PI, 10.0)
        with pytest.raises(NotInFreeSpaceError):
            sm2(s, square_room, Pose(-0.5, 0.0, 0.0))

    def test_rejects_correction_into_wall(self, square_room, centre, monkeypatch):
        sm2_module = sys.modules["cbgl.sm2"]

        def into_wall(scan_r, scan_v, config):
            return sm2_module.IcpResult((3.0, 0.0, 0.0), 4, True, 0.01)

        monkeypatch.setattr(sm2_module, "scan_match", into_wall)
        s = scan_map(square_room, centre, 36, TWO_PI, 10.0)
        m = sm2(s, square_room, centre)
        assert not m.converged
        assert m.corrected_pose == centre

    def test_wrong_room(self):
        res = 0.05
        state = np.full((130, 200), OCCUPIED, np.int8)
        state[2:82, 2:82] = FREE  # 4 x 4 m room
        state[2:122, 90:150] = FREE  # 3 x 6 m room
        state[40:60, 110:130] = OCCUPIED  # pillar in the second room
        g = OccupancyGrid(state, res)
        rng = np.random.default_rng(0)
        for _ in range(10):
            truth = Pose(rng.uniform(0.5, 3.5), rng.uniform(0.5, 3.5), rng.uniform(-3, 3))
            s = scan_map(g, truth, 360, TWO_PI, 10.0)
            h = Pose(rng.uniform(4.8, 7.2), rng.uniform(0.4, 1.6), rng.uniform(-3, 3))
            m = sm2(s, g, h)
            assert not m.converged or m.residual > 0.2

    def test_insufficient_points(self, square_room, centre):
        s = RangeScan(TWO_PI, 0.5, np.full(36, 0.5))
        m = sm2(s, square_room, centre)
        assert not m.converged and m.corrected_pose == centre and m.residual == float("inf")
