"""Scan-to-map-scan matching with a point-to-line ICP backend."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import NamedTuple, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .grid_map import OccupancyGrid, is_free
from .pose import Pose
from .scan_geometry import NotInFreeSpaceError, RangeScan, scan_map

MIN_POINTS = 10
# consecutive residual increases that count as divergence
_DIVERGENCE_RUN = 3


class InsufficientPointsError(ValueError):
    pass


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-4
    max_correspondence_distance: float = 1.0
    outlier_trim_ratio: float = 0.1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in ("translation_epsilon", "rotation_epsilon", "max_correspondence_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.outlier_trim_ratio <= 0.5:
            raise ValueError("outlier_trim_ratio must lie in [0, 0.5]")

    def to_dict(self) -> dict:
        return asdict(self)


class IcpResult(NamedTuple):
    delta: Tuple[float, float, float]
    iterations: int
    converged: bool
    residual: float


@dataclass(frozen=True)
class MatchResult:
    corrected_pose: Pose
    delta: Tuple[float, float, float]
    iterations: int
    converged: bool
    residual: float


def scan_to_points(scan: RangeScan, pose: Pose = Pose(0.0, 0.0, 0.0)) -> np.ndarray:
    """End points of all rays shorter than ``r_max``, shape ``(m, 2)``."""
    valid = scan.ranges < scan.r_max
    r = scan.ranges[valid]
    a = pose.theta + scan.bearings[valid]
    return np.column_stack([pose.x + r * np.cos(a), pose.y + r * np.sin(a)])


def _target_lines(points: np.ndarray, closed: bool):
    """Per target point, the index of the adjacent point forming its line (-1 if none)."""
    m = points.shape[0]
    prev = np.arange(m) - 1
    nxt = np.arange(m) + 1
    if closed:
        prev[0] = m - 1
        nxt[-1] = 0
    else:
        nxt[-1] = -1
    d_prev = np.where(prev >= 0, np.linalg.norm(points - points[prev], axis=1), np.inf)
    d_next = np.where(nxt >= 0, np.linalg.norm(points - points[np.maximum(nxt, 0)], axis=1), np.inf)
    mate = np.where(d_prev <= d_next, prev, nxt)
    return mate, np.minimum(d_prev, d_next)


def _point_to_line(src, rot, trans, tgt, tree, mate, mate_dist, max_d):
    """Transformed source points with a partner, their normals and signed errors."""
    cur = src @ rot.T + trans
    dist, j = tree.query(cur)
    close = dist <= max_d
    cur, j = cur[close], j[close]
    q = tgt[j]
    partner = mate[j]
    # fall back to point-to-point where the adjacent target point is far (depth jump)
    has_line = (partner >= 0) & (mate_dist[j] <= max_d)
    seg = tgt[np.maximum(partner, 0)] - q
    seg_len = np.linalg.norm(seg, axis=1)
    has_line &= seg_len > 0
    normals = np.empty_like(cur)
    normals[has_line] = np.column_stack([-seg[has_line, 1], seg[has_line, 0]]) / seg_len[has_line, None]
    diff = cur - q
    pp = ~has_line
    if pp.any():
        dn = np.linalg.norm(diff[pp], axis=1)
        fallback = np.column_stack([np.ones(dn.size), np.zeros(dn.size)])
        nz = dn > 0
        fallback[nz] = diff[pp][nz] / dn[nz, None]
        normals[pp] = fallback
    return cur, normals, np.einsum("ij,ij->i", normals, diff)


def scan_match(scan_r: RangeScan, scan_v: RangeScan, config: IcpConfig = IcpConfig()) -> IcpResult:
    """Pose of the measuring sensor expressed in the virtual sensor's frame.

    Points of ``scan_r`` are aligned to lines through adjacent points of
    ``scan_v``. The returned ``delta`` is the correction to compose onto the
    pose ``scan_v`` was cast from. ``residual`` is the untrimmed mean
    point-to-line distance at the final transform.
    """
    src = scan_to_points(scan_r)
    tgt = scan_to_points(scan_v)
    if src.shape[0] < MIN_POINTS or tgt.shape[0] < MIN_POINTS:
        raise InsufficientPointsError(
            f"need >= {MIN_POINTS} valid rays per scan, got {src.shape[0]} and {tgt.shape[0]}"
        )
    closed = scan_v.angular_range >= 2.0 * math.pi - 1e-12 and np.all(scan_v.ranges < scan_v.r_max)
    mate, mate_dist = _target_lines(tgt, closed)
    tree = cKDTree(tgt)
    lines = (tgt, tree, mate, mate_dist, config.max_correspondence_distance)

    rot = np.eye(2)
    trans = np.zeros(2)
    prev_residual = np.inf
    rising = 0
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        cur, normals, err = _point_to_line(src, rot, trans, *lines)
        if err.size < MIN_POINTS:
            break

        if config.outlier_trim_ratio > 0:
            n_keep = max(MIN_POINTS, int(math.ceil(err.size * (1.0 - config.outlier_trim_ratio))))
            if n_keep < err.size:
                keep = np.argsort(np.abs(err), kind="stable")[:n_keep]
                cur, normals, err = cur[keep], normals[keep], err[keep]

        trimmed = float(np.mean(np.abs(err)))
        if trimmed > prev_residual:
            rising += 1
            if rising >= _DIVERGENCE_RUN:
                break
        else:
            rising = 0
        prev_residual = trimmed

        jac = np.column_stack([
            normals[:, 0],
            normals[:, 1],
            normals[:, 1] * cur[:, 0] - normals[:, 0] * cur[:, 1],
        ])
        step, *_ = np.linalg.lstsq(jac, -err, rcond=None)
        dx, dy, dth = step
        c, s = math.cos(dth), math.sin(dth)
        inc = np.array([[c, -s], [s, c]])
        rot = inc @ rot
        trans = inc @ trans + np.array([dx, dy])
        if math.hypot(dx, dy) < config.translation_epsilon and abs(dth) < config.rotation_epsilon:
            converged = True
            break

    _, _, err = _point_to_line(src, rot, trans, *lines)
    residual = float(np.mean(np.abs(err))) if err.size else float("inf")
    theta = math.atan2(rot[1, 0], rot[0, 0])
    return IcpResult((float(trans[0]), float(trans[1]), float(theta)), it, converged, residual)


def sm2(
    scan_r: RangeScan,
    grid: OccupancyGrid,
    pose: Pose,
    config: IcpConfig = IcpConfig(),
    passes: int = 1,
) -> MatchResult:
    """Correct ``pose`` by matching its map-scan to ``scan_r``.

    A correction that would leave free space is rejected: the input pose is
    returned with ``converged=False``. ``passes > 1`` re-casts the map-scan
    from the corrected pose and matches again.
    """
    if not is_free(grid, (pose.x, pose.y)):
        raise NotInFreeSpaceError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in free space")
    current = pose
    total_iterations = 0
    result = None
    for _ in range(max(1, passes)):
        scan_v = scan_map(grid, current, scan_r.n_rays, scan_r.angular_range, scan_r.r_max)
        try:
            result = scan_match(scan_r, scan_v, config)
        except InsufficientPointsError:
            return MatchResult(pose, (0.0, 0.0, 0.0), total_iterations, False, float("inf"))
        total_iterations += result.iterations
        current = current.compose(result.delta)
        if not is_free(grid, (current.x, current.y)):
            return MatchResult(pose, (0.0, 0.0, 0.0), total_iterations, False, result.residual)
    # single pass: the matcher's delta composes onto the input pose exactly
    delta = result.delta if passes <= 1 else relative_delta(pose, current)
    return MatchResult(current, delta, total_iterations, result.converged, result.residual)


def relative_delta(a: Pose, b: Pose) -> Tuple[float, float, float]:
    """``delta`` such that ``a.compose(delta) == b`` (up to rounding)."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return (c * dx + s * dy, -s * dx + c * dy, float(Pose(0, 0, b.theta - a.theta).theta))
