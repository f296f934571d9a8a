"""Range scans and map-scans (virtual scans ray-cast inside a grid)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from . import _raycast
from .grid_map import OccupancyGrid, are_free, is_free
from .pose import Pose, poses_to_array


class ScanError(ValueError):
    pass


class NotInFreeSpaceError(ValueError):
    """A pose that must lie in free space does not."""


def scan_bearings(angular_range: float, n_rays: int) -> np.ndarray:
    """Ray bearings relative to the sensor heading: ``-L/2 + L*n/N`` for ``n = 0..N-1``."""
    n = np.arange(n_rays, dtype=np.float64)
    return -angular_range / 2.0 + angular_range * n / n_rays


@dataclass(frozen=True, eq=False)
class RangeScan:
    angular_range: float
    r_max: float
    ranges: np.ndarray

    def __post_init__(self):
        ranges = np.array(self.ranges, dtype=np.float64)
        if ranges.ndim != 1 or ranges.size == 0:
            raise ScanError("ranges must be a non-empty 1-D sequence")
        if not 0.0 < self.angular_range <= 2.0 * math.pi + 1e-12:
            raise ScanError(f"angular range must lie in (0, 2pi], got {self.angular_range}")
        if not self.r_max > 0:
            raise ScanError(f"r_max must be positive, got {self.r_max}")
        if not np.all(np.isfinite(ranges)):
            raise ScanError("ranges must be finite")
        if ranges.min() < 0.0 or ranges.max() > self.r_max:
            raise ScanError(f"ranges must lie in [0, r_max={self.r_max}]")
        ranges.setflags(write=False)
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "angular_range", float(self.angular_range))
        object.__setattr__(self, "r_max", float(self.r_max))

    @property
    def n_rays(self) -> int:
        return self.ranges.shape[0]

    @property
    def bearings(self) -> np.ndarray:
        return scan_bearings(self.angular_range, self.n_rays)

    def same_shape(self, other: "RangeScan") -> bool:
        return self.n_rays == other.n_rays and self.angular_range == other.angular_range

    def __eq__(self, other):
        if not isinstance(other, RangeScan):
            return NotImplemented
        return (
            self.angular_range == other.angular_range
            and self.r_max == other.r_max
            and np.array_equal(self.ranges, other.ranges)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "lambda": self.angular_range,
            "n_rays": self.n_rays,
            "r_max": self.r_max,
            "ranges": self.ranges.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RangeScan":
        try:
            scan = cls(float(d["lambda"]), float(d["r_max"]), d["ranges"])
            n_rays = int(d.get("n_rays", scan.n_rays))
        except (KeyError, TypeError) as exc:
            raise ScanError(f"scan object is missing or has a bad field: {exc}") from exc
        if n_rays != scan.n_rays:
            raise ScanError(f"n_rays={n_rays} but {scan.n_rays} ranges given")
        return scan


def save_scan(scan: RangeScan, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(scan.to_dict()))


def load_scan(path: Union[str, Path]) -> RangeScan:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScanError(f"{path}: not valid JSON ({exc})") from exc
    return RangeScan.from_dict(data)


def _grid_frame(grid: OccupancyGrid, poses: np.ndarray):
    gx, gy = grid.world_to_grid(poses[:, 0], poses[:, 1])
    return (
        np.ascontiguousarray(gx * grid.resolution),
        np.ascontiguousarray(gy * grid.resolution),
        np.ascontiguousarray(poses[:, 2] - grid.origin.theta),
    )


def check_in_free_space(grid: OccupancyGrid, poses: np.ndarray) -> None:
    if poses.shape[0] == 0:
        return
    ok = are_free(grid, poses[:, 0], poses[:, 1])
    if not ok.all():
        i = int(np.argmin(ok))
        raise NotInFreeSpaceError(f"pose {i} at ({poses[i, 0]:.3f}, {poses[i, 1]:.3f}) is not in free space")


def scan_map_many(grid: OccupancyGrid, poses, n_rays: int, angular_range: float, r_max: float) -> np.ndarray:
    """Map-scan ranges for many poses at once, shape ``(n_poses, n_rays)``."""
    arr = poses_to_array(poses)
    check_in_free_space(grid, arr)
    xs, ys, ths = _grid_frame(grid, arr)
    return _raycast.cast_scans(
        grid.clearance, grid.resolution, xs, ys, ths,
        scan_bearings(angular_range, n_rays), float(r_max),
    )


def scan_map(grid: OccupancyGrid, pose: Pose, n_rays: int, angular_range: float, r_max: float) -> RangeScan:
    """Virtual scan ray-cast from ``pose`` within ``grid``."""
    if not is_free(grid, (pose.x, pose.y)):
        raise NotInFreeSpaceError(f"pose ({pose.x:.3f}, {pose.y:.3f}) is not in free space")
    ranges = scan_map_many(grid, [pose], n_rays, angular_range, r_max)[0]
    return RangeScan(angular_range, r_max, ranges)


def simulate_measurement(
    grid: OccupancyGrid,
    true_pose: Pose,
    n_rays: int,
    angular_range: float,
    r_max: float,
    noise_sigma: float,
    rng: np.random.Generator,
) -> RangeScan:
    """Map-scan plus i.i.d. Gaussian range noise, clamped to ``[0, r_max]``.

    Rays with no return (true range ``r_max``) stay at ``r_max``.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {noise_sigma}")
    clean = scan_map(grid, true_pose, n_rays, angular_range, r_max).ranges
    noise = rng.normal(0.0, noise_sigma, size=n_rays) if noise_sigma > 0 else np.zeros(n_rays)
    noisy = np.clip(clean + noise, 0.0, r_max)
    noisy[clean >= r_max] = r_max
    return RangeScan(angular_range, r_max, noisy)


def downsample(scan: RangeScan, factor: int) -> RangeScan:
    """Keep every ``factor``-th ray starting at index 0."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if scan.n_rays % factor:
        raise ValueError(f"factor {factor} does not divide n_rays={scan.n_rays}")
    return RangeScan(scan.angular_range, scan.r_max, scan.ranges[::factor])
