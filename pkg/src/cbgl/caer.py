"""CAER metric, psi-fields, rank fields and bottom-k hypothesis selection."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import _raycast
from .grid_map import OccupancyGrid
from .pose import Pose, array_to_poses, poses_to_array
from .scan_geometry import RangeScan, ScanError, _grid_frame, check_in_free_space

# rays sampled for the pruning lower bound: one every _BOUND_STRIDE rays
_BOUND_STRIDE = 8
# hypotheses evaluated in full per pruning round
_BATCH = 512


def caer(scan_p: RangeScan, scan_q: RangeScan) -> float:
    """Sum over rays of ``|p[n] - q[n]|``; scans must agree in angular range and ray count."""
    if scan_p.n_rays != scan_q.n_rays:
        raise ScanError(f"ray counts differ: {scan_p.n_rays} vs {scan_q.n_rays}")
    if scan_p.angular_range != scan_q.angular_range:
        raise ScanError(f"angular ranges differ: {scan_p.angular_range} vs {scan_q.angular_range}")
    return float(_raycast.abs_diff_sum(scan_p.ranges, scan_q.ranges))


@dataclass(frozen=True, eq=False)
class PsiField:
    hypotheses: np.ndarray  # (n, 3) poses
    psi: np.ndarray

    def __post_init__(self):
        if self.hypotheses.shape[0] != self.psi.shape[0]:
            raise ValueError("hypotheses and psi differ in length")

    def __len__(self):
        return self.psi.shape[0]

    @property
    def poses(self) -> List[Pose]:
        return array_to_poses(self.hypotheses)


@dataclass(frozen=True, eq=False)
class RankedField:
    field: PsiField
    rank_permutation: np.ndarray

    @property
    def ranks(self) -> np.ndarray:
        """Rank of each hypothesis in its original position (inverse permutation)."""
        ranks = np.empty_like(self.rank_permutation)
        ranks[self.rank_permutation] = np.arange(self.rank_permutation.size)
        return ranks

    @property
    def sorted_psi(self) -> np.ndarray:
        return self.field.psi[self.rank_permutation]

    def to_csv(self) -> str:
        """Rows ``x,y,theta,psi,rank`` in original hypothesis order."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "theta", "psi", "rank"])
        ranks = self.ranks
        for (x, y, th), p, r in zip(self.field.hypotheses, self.field.psi, ranks):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(th)), repr(float(p)), int(r)])
        return buf.getvalue()


def psi_field(scan_r: RangeScan, grid: OccupancyGrid, hypotheses) -> PsiField:
    """CAER between ``scan_r`` and the map-scan of every hypothesis."""
    arr = poses_to_array(hypotheses)
    if arr.shape[0] == 0:
        return PsiField(arr, np.empty(0))
    check_in_free_space(grid, arr)
    xs, ys, ths = _grid_frame(grid, arr)
    psi = _raycast.psi_all(
        grid.clearance, grid.resolution, xs, ys, ths,
        scan_r.bearings, scan_r.ranges, scan_r.r_max,
    )
    return PsiField(arr, psi)


def rank_field(field: PsiField) -> RankedField:
    """Ascending-CAER permutation; ties keep original order."""
    return RankedField(field, np.argsort(field.psi, kind="stable"))


def bottom_k_indices(
    scan_r: RangeScan,
    grid: OccupancyGrid,
    hypotheses,
    k: int,
    prune: bool = True,
    timing: Optional[dict] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and CAER values of the ``min(k, n)`` lowest-CAER hypotheses.

    With ``prune`` a cheap lower bound (CAER over a ray subset) orders the
    hypotheses and full sums are abandoned once they exceed the current k-th
    best value. The selection is exact, and the returned CAER values are
    bit-identical to :func:`psi_field`.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    arr = poses_to_array(hypotheses)
    n = arr.shape[0]
    if n == 0:
        raise ValueError("hypothesis set is empty")
    k = min(int(k), n)
    check_in_free_space(grid, arr)
    xs, ys, ths = _grid_frame(grid, arr)
    args = (grid.clearance, grid.resolution, xs, ys, ths,
            scan_r.bearings, scan_r.ranges, scan_r.r_max)
    t_field = 0.0
    t_rank = 0.0

    if not prune or n <= _BATCH:
        t0 = time.perf_counter()
        psi = _raycast.psi_all(*args)
        t1 = time.perf_counter()
        order = np.argsort(psi, kind="stable")[:k]
        t2 = time.perf_counter()
        t_field, t_rank = t1 - t0, t2 - t1
        if timing is not None:
            timing["field_evaluation"] = t_field
            timing["ranking"] = t_rank
        return order, psi[order]

    t0 = time.perf_counter()
    terms, bound = _raycast.psi_lower_bound(*args, _BOUND_STRIDE)
    t1 = time.perf_counter()
    visit = np.argsort(bound, kind="stable")
    t2 = time.perf_counter()
    t_field += t1 - t0
    t_rank += t2 - t1

    best_idx = np.empty(0, dtype=np.int64)
    best_psi = np.empty(0)
    tau = np.inf
    for start in range(0, n, _BATCH):
        chunk = visit[start:start + _BATCH]
        # bound[i] > tau means psi[i] > tau: it cannot enter the bottom k
        chunk = chunk[bound[chunk] <= tau]
        if chunk.size == 0:
            break
        t0 = time.perf_counter()
        vals = _raycast.psi_bounded(*args, _BOUND_STRIDE, terms, bound, chunk, tau)
        t1 = time.perf_counter()
        keep = np.isfinite(vals)
        best_idx = np.concatenate([best_idx, chunk[keep]])
        best_psi = np.concatenate([best_psi, vals[keep]])
        # order by (psi, original index) for a stable tie-break
        sel = np.lexsort((best_idx, best_psi))[:k]
        best_idx, best_psi = best_idx[sel], best_psi[sel]
        if best_idx.size == k:
            tau = best_psi[-1]
        t2 = time.perf_counter()
        t_field += t1 - t0
        t_rank += t2 - t1
    if timing is not None:
        timing["field_evaluation"] = t_field
        timing["ranking"] = t_rank
    return best_idx, best_psi


def bottom_k_poses(scan_r: RangeScan, grid: OccupancyGrid, hypotheses, k: int) -> List[Pose]:
    """The ``min(k, |H|)`` hypotheses with the smallest CAER, ascending."""
    arr = poses_to_array(hypotheses)
    idx, _ = bottom_k_indices(scan_r, grid, arr, k)
    return array_to_poses(arr[idx])
