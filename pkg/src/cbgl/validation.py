"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import math
import numbers

import numpy as np

from .grid_map import NoFreeSpaceError, OccupancyGrid
from .scan_geometry import RangeScan, ScanError


def check_grid(grid) -> OccupancyGrid:
    if not isinstance(grid, OccupancyGrid):
        raise TypeError(f"expected an OccupancyGrid, got {type(grid).__name__}")
    if grid.n_free == 0:
        raise NoFreeSpaceError("map has no free space")
    return grid


def check_positive(value, name: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a number, got {type(value).__name__}")
    if integer and int(value) != value:
        raise ValueError(f"{name} must be an integer, got {value}")
    if not math.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return int(value) if integer else float(value)


def check_scan(scan, reference: RangeScan = None) -> RangeScan:
    if not isinstance(scan, RangeScan):
        raise TypeError(f"expected a RangeScan, got {type(scan).__name__}")
    if reference is not None and not scan.same_shape(reference):
        raise ScanError(
            f"scan has {scan.n_rays} rays over {scan.angular_range} rad, "
            f"expected {reference.n_rays} over {reference.angular_range}"
        )
    return scan


def check_scans(X, angular_range=None, r_max=None) -> list:
    """A list of RangeScan from either RangeScan objects or a 2-D range array.

    Array rows need ``angular_range`` and ``r_max`` to become scans.
    """
    if isinstance(X, RangeScan):
        return [X]
    if isinstance(X, np.ndarray) or (isinstance(X, (list, tuple)) and X and not isinstance(X[0], RangeScan)):
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"expected a 2-D array of ranges, got shape {arr.shape}")
        if angular_range is None or r_max is None:
            raise ValueError("angular_range and r_max are required for array input")
        return [RangeScan(angular_range, r_max, row) for row in arr]
    scans = list(X)
    if not scans:
        raise ValueError("no scans given")
    for s in scans:
        check_scan(s)
    return scans


def check_pose_array(poses) -> np.ndarray:
    arr = np.asarray(poses, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"poses must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("poses must be finite")
    return arr
