"""Estimator-style wrapper: ``fit`` on a map, ``predict`` poses from scans."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .grid_map import free_area
from .pipeline import CbglConfig, CbglResult, cbgl, location_count
from .pose import poses_to_array, wrap_angle
from .sm2 import IcpConfig
from .validation import check_grid, check_pose_array, check_positive, check_scan, check_scans


class CBGL(BaseEstimator):
    """Single-shot global localisation within a fixed occupancy grid.

    Parameters
    ----------
    d_l : float
        Hypothesis locations per square metre of free space.
    d_alpha : int
        Headings per location.
    k : int
        Number of lowest-CAER hypotheses refined by scan matching.
    icp : IcpConfig or None
        Scan-matcher settings; ``None`` uses the defaults.
    sm2_passes : int
        Match/re-cast rounds per candidate.
    random_state : int
        Seed of hypothesis dispersal. Scan ``i`` of a ``predict`` call uses
        ``random_state + i``.
    angular_range, r_max : float or None
        Sensor geometry, needed only when scans are given as a range array.
    """

    def __init__(self, d_l=40.0, d_alpha=32, k=10, icp=None, sm2_passes=1,
                 random_state=0, angular_range=None, r_max=None):
        self.d_l = d_l
        self.d_alpha = d_alpha
        self.k = k
        self.icp = icp
        self.sm2_passes = sm2_passes
        self.random_state = random_state
        self.angular_range = angular_range
        self.r_max = r_max

    def _config(self) -> CbglConfig:
        return CbglConfig(
            d_l=check_positive(self.d_l, "d_l"),
            d_alpha=check_positive(self.d_alpha, "d_alpha", integer=True),
            k=check_positive(self.k, "k", integer=True),
            icp=self.icp if self.icp is not None else IcpConfig(),
            seed=int(self.random_state),
            sm2_passes=check_positive(self.sm2_passes, "sm2_passes", integer=True),
        )

    def fit(self, grid, y=None):
        self.config_ = self._config()
        self.grid_ = check_grid(grid)
        self.free_area_ = free_area(grid)
        self.n_hypotheses_ = location_count(self.free_area_, self.config_.d_l) * self.config_.d_alpha
        return self

    def localize(self, scan, seed=None) -> CbglResult:
        """Full result (estimate, candidates, timings) for one scan."""
        check_is_fitted(self, "grid_")
        scan = check_scan(scan)
        cfg = self.config_ if seed is None else replace(self.config_, seed=int(seed))
        return cbgl(scan, self.grid_, cfg)

    def predict(self, X) -> np.ndarray:
        """Pose estimates ``(x, y, theta)``, one row per scan."""
        check_is_fitted(self, "grid_")
        scans = check_scans(X, self.angular_range, self.r_max)
        out = np.empty((len(scans), 3))
        for i, scan in enumerate(scans):
            out[i] = self.localize(scan, seed=self.config_.seed + i).estimate.as_array()
        return out

    def score(self, X, y, delta_l=0.5, delta_theta=0.4) -> float:
        """Share of scans localised within ``delta_l`` metres and ``delta_theta`` radians."""
        truth = check_pose_array(poses_to_array(y) if not isinstance(y, np.ndarray) else y)
        est = self.predict(X)
        if est.shape[0] != truth.shape[0]:
            raise ValueError(f"{est.shape[0]} scans but {truth.shape[0]} poses")
        dl = np.hypot(est[:, 0] - truth[:, 0], est[:, 1] - truth[:, 1])
        dth = np.abs(wrap_angle(truth[:, 2] - est[:, 2]))
        return float(np.mean((dl <= delta_l) & (dth <= delta_theta)))
