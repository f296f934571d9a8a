import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbgl.caer import (
    PsiField,
    bottom_k_indices,
    bottom_k_poses,
    caer,
    psi_field,
    rank_field,
)
from cbgl.grid_map import sample_free_points
from cbgl.pipeline import disperse_hypotheses
from cbgl.pose import Pose, poses_to_array
from cbgl.scan_geometry import RangeScan, ScanError, scan_map, simulate_measurement

from conftest import RES
from oracles import naive_caer

TWO_PI = 2 * math.pi


def dyadic_scan(rng, n=64, r_max=10.0):
    # multiples of 2^-10 keep every partial sum exact
    return RangeScan(TWO_PI, r_max, np.round(rng.uniform(0, r_max, n) * 1024) / 1024)


class TestCaer:
    def test_example(self):
        a = RangeScan(TWO_PI, 10.0, [1, 2, 3])
        b = RangeScan(TWO_PI, 10.0, [1.5, 2, 2.5])
        assert caer(a, b) == 1.0

    def test_identity(self, rng):
        s = RangeScan(TWO_PI, 10.0, rng.uniform(0, 10, 360))
        assert caer(s, s) == 0.0

    def test_mismatch(self):
        with pytest.raises(ScanError):
            caer(RangeScan(TWO_PI, 10.0, [1, 2]), RangeScan(TWO_PI, 10.0, [1, 2, 3]))
        with pytest.raises(ScanError):
            caer(RangeScan(TWO_PI, 10.0, [1, 2]), RangeScan(math.pi, 10.0, [1, 2]))

    def test_matches_naive_oracle(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 400))
            a = RangeScan(TWO_PI, 10.0, rng.uniform(0, 10, n))
            b = RangeScan(TWO_PI, 10.0, rng.uniform(0, 10, n))
            assert caer(a, b) == naive_caer(a.ranges, b.ranges)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (dyadic_scan(rng) for _ in range(3))
        assert caer(a, a) == 0.0
        assert caer(a, b) == caer(b, a)
        assert caer(a, c) <= caer(a, b) + caer(b, c)
        assert caer(a, b) >= 0.0


class TestPsiField:
    def test_true_pose(self, square_room, centre):
        s = scan_map(square_room, centre, 360, TWO_PI, 10.0)
        f = psi_field(s, square_room, [centre])
        assert f.psi[0] <= 360 * RES
        assert f.psi[0] == 0.0

    def test_increasing_with_distance(self, square_room):
        truth = Pose(1.5, 1.7, 0.3)
        s = scan_map(square_room, truth, 360, TWO_PI, 10.0)
        hyps = [Pose(truth.x + d * math.cos(0.8), truth.y + d * math.sin(0.8), truth.theta) for d in (0, 0.5, 1.0)]
        psi = psi_field(s, square_room, hyps).psi
        assert psi[0] < psi[1] < psi[2]

    def test_empty(self, square_room, centre):
        s = scan_map(square_room, centre, 8, TWO_PI, 10.0)
        f = psi_field(s, square_room, [])
        assert len(f) == 0

    def test_matches_scan_map(self, square_room, centre, rng):
        s = simulate_measurement(square_room, centre, 90, TWO_PI, 10.0, 0.05, rng)
        hyps = [Pose(*rng.uniform(0.1, 3.9, 2), rng.uniform(-3, 3)) for _ in range(20)]
        psi = psi_field(s, square_room, hyps).psi
        for h, v in zip(hyps, psi):
            assert v == caer(s, scan_map(square_room, h, 90, TWO_PI, 10.0))

    def test_permutation(self, square_room, centre, rng):
        s = simulate_measurement(square_room, centre, 90, TWO_PI, 10.0, 0.05, rng)
        arr = disperse_hypotheses(square_room, 5, 4, rng)
        perm = rng.permutation(arr.shape[0])
        np.testing.assert_array_equal(
            psi_field(s, square_room, arr).psi[perm], psi_field(s, square_room, arr[perm]).psi
        )

    def test_outside_free_space(self, square_room, centre):
        s = scan_map(square_room, centre, 8, TWO_PI, 10.0)
        with pytest.raises(ValueError):
            psi_field(s, square_room, [Pose(-1, -1, 0)])


class TestRankField:
    def make(self, psi):
        return rank_field(PsiField(np.zeros((len(psi), 3)), np.array(psi, dtype=float)))

    def test_sort(self):
        np.testing.assert_array_equal(self.make([5.0, 1.0, 3.0, 2.0]).rank_permutation, [1, 3, 2, 0])

    def test_ties(self):
        np.testing.assert_array_equal(self.make([2.0, 2.0]).rank_permutation, [0, 1])

    def test_ascending(self):
        np.testing.assert_array_equal(self.make([1.0, 2.0, 3.0]).rank_permutation, [0, 1, 2])

    def test_ranks_inverse(self, rng):
        r = self.make(rng.random(50))
        np.testing.assert_array_equal(r.ranks[r.rank_permutation], np.arange(50))
        assert np.all(np.diff(r.sorted_psi) >= 0)

    def test_csv(self):
        r = rank_field(PsiField(np.array([[0, 0, 0], [1, 1, 1.0]]), np.array([2.0, 1.0])))
        lines = r.to_csv().splitlines()
        assert lines[0] == "x,y,theta,psi,rank"
        assert lines[1].endswith(",2.0,1") and lines[2].endswith(",1.0,0")


class TestBottomK:
    def field_setup(self, square_room, rng, n_loc=25, d_alpha=4):
        truth = Pose(1.3, 2.2, 0.4)
        s = simulate_measurement(square_room, truth, 120, TWO_PI, 10.0, 0.05, rng)
        pts = sample_free_points(square_room, n_loc, rng)
        hyps = np.repeat(np.column_stack([pts, np.zeros(n_loc)]), d_alpha, axis=0)
        hyps[:, 2] = np.tile(np.linspace(-math.pi, math.pi, d_alpha, endpoint=False), n_loc)
        return s, hyps

    def test_example(self, square_room, centre):
        # offsets chosen so the CAER ranks are 3, 0, 2, 1
        s = scan_map(square_room, centre, 90, TWO_PI, 10.0)
        hyps = [Pose(2.0 + d, 2.0, 0.0) for d in (1.2, 0.0, 0.8, 0.4)]
        psi = psi_field(s, square_room, hyps).psi
        assert list(np.argsort(psi)) == [1, 3, 2, 0]
        assert bottom_k_poses(s, square_room, hyps, 2) == [hyps[1], hyps[3]]

    def test_all(self, square_room, rng):
        s, hyps = self.field_setup(square_room, rng)
        out = bottom_k_poses(s, square_room, hyps, hyps.shape[0])
        order = rank_field(psi_field(s, square_room, hyps)).rank_permutation
        assert poses_to_array(out).tolist() == hyps[order].tolist()

    def test_truncates(self, square_room, rng):
        s, hyps = self.field_setup(square_room, rng, 3, 1)
        assert len(bottom_k_poses(s, square_room, hyps, 10)) == 3

    def test_errors(self, square_room, centre):
        s = scan_map(square_room, centre, 8, TWO_PI, 10.0)
        with pytest.raises(ValueError):
            bottom_k_poses(s, square_room, [], 1)
        with pytest.raises(ValueError):
            bottom_k_poses(s, square_room, [centre], 0)

    def test_finds_truth(self, square_room, rng):
        truth = Pose(1.1, 2.7, -0.9)
        s = scan_map(square_room, truth, 360, TWO_PI, 10.0)
        others = [Pose(*sample_free_points(square_room, 1, rng)[0], rng.uniform(-3, 3)) for _ in range(99)]
        hyps = others[:40] + [truth] + others[40:]
        assert bottom_k_poses(s, square_room, hyps, 1) == [truth]

    @pytest.mark.parametrize("seed", range(4))
    def test_pruned_equals_full(self, square_room, seed):
        rng = np.random.default_rng(seed)
        truth = Pose(*rng.uniform(0.5, 3.5, 2), rng.uniform(-3, 3))
        s = simulate_measurement(square_room, truth, 360, TWO_PI, 10.0, 0.05, rng)
        hyps = disperse_hypotheses(square_room, 40, 8, rng)  # 5120 hypotheses, 10 batches
        for k in (1, 7, 10, 600):
            a_idx, a_psi = bottom_k_indices(s, square_room, hyps, k, prune=True)
            b_idx, b_psi = bottom_k_indices(s, square_room, hyps, k, prune=False)
            np.testing.assert_array_equal(a_idx, b_idx)
            np.testing.assert_array_equal(a_psi, b_psi)

    def test_pruned_ties(self, square_room, centre):
        # duplicated hypotheses tie exactly; lower index must win
        s = scan_map(square_room, centre, 90, TWO_PI, 10.0)
        base = disperse_hypotheses(square_room, 40, 2, np.random.default_rng(0))[:600]
        hyps = np.concatenate([base, base])
        for k in (1, 5, 50):
            a, _ = bottom_k_indices(s, square_room, hyps, k, prune=True)
            b, _ = bottom_k_indices(s, square_room, hyps, k, prune=False)
            np.testing.assert_array_equal(a, b)

    def test_timing_keys(self, square_room, rng):
        s, hyps = self.field_setup(square_room, rng)
        t = {}
        bottom_k_indices(s, square_room, hyps, 3, timing=t)
        assert set(t) == {"field_evaluation", "ranking"}


_THREAD_SCRIPT = r"""
import math, sys, numpy as np, numba
from cbgl.bench import generate_environment, EnvSpec
from cbgl.caer import psi_field, bottom_k_indices
from cbgl.pipeline import disperse_hypotheses
from cbgl.pose import Pose
from cbgl.scan_geometry import simulate_measurement
numba.set_num_threads(int(sys.argv[1]))
g = generate_environment(EnvSpec(area=30, n_rooms=2, seed=3))
rng = np.random.default_rng(5)
h = disperse_hypotheses(g, 20, 8, rng)
s = simulate_measurement(g, Pose(*h[0, :2], 0.3), 360, 2 * math.pi, 10.0, 0.05, rng)
psi = psi_field(s, g, h).psi
idx, val = bottom_k_indices(s, g, h, 10)
sys.stdout.write(psi.tobytes().hex() + idx.tobytes().hex() + val.tobytes().hex())
"""


def test_thread_count_does_not_change_field():
    outs = []
    for n in (1, 4):
        env = dict(os.environ, NUMBA_NUM_THREADS="4")
        r = subprocess.run([sys.executable, "-c", _THREAD_SCRIPT, str(n)], capture_output=True, text=True, env=env)
        assert r.returncode == 0, r.stderr
        outs.append(r.stdout)
    assert outs[0] == outs[1]
