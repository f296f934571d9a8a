"""Single-shot global localisation: disperse, rank by CAER, refine the best k, pick the best."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .caer import bottom_k_indices, psi_field
from .grid_map import NoFreeSpaceError, OccupancyGrid, free_area, sample_free_points
from .pose import TWO_PI, Pose, array_to_poses, wrap_angle
from .scan_geometry import RangeScan
from .sm2 import IcpConfig, MatchResult, sm2

STAGES = ("dispersal", "field_evaluation", "ranking", "sm2", "final_selection")

Matcher = Callable[[RangeScan, OccupancyGrid, Pose, IcpConfig], MatchResult]


@dataclass(frozen=True)
class CbglConfig:
    d_l: float = 40.0
    d_alpha: int = 32
    k: int = 10
    icp: IcpConfig = field(default_factory=IcpConfig)
    seed: int = 0
    sm2_passes: int = 1

    def __post_init__(self):
        if not self.d_l >= 1:
            raise ValueError(f"d_l must be >= 1, got {self.d_l}")
        if int(self.d_alpha) != self.d_alpha or self.d_alpha < 1:
            raise ValueError(f"d_alpha must be a positive integer, got {self.d_alpha}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        if self.sm2_passes < 1:
            raise ValueError("sm2_passes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "d_l": self.d_l,
            "d_alpha": self.d_alpha,
            "k": self.k,
            "seed": self.seed,
            "sm2_passes": self.sm2_passes,
            "icp": self.icp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CbglConfig":
        d = dict(d)
        icp = IcpConfig(**d.pop("icp", {}))
        unknown = set(d) - {"d_l", "d_alpha", "k", "seed", "sm2_passes"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(icp=icp, **d)


@dataclass(frozen=True)
class Candidate:
    initial: Pose
    initial_psi: float
    pose: Pose
    psi: float
    converged: bool
    iterations: int
    residual: float


@dataclass(frozen=True)
class CbglResult:
    estimate: Pose
    psi_of_estimate: float
    candidates: Tuple[Candidate, ...]
    hypothesis_count: int
    timing: Dict[str, float]  # seconds per stage

    @property
    def total_time(self) -> float:
        return float(sum(self.timing.values()))

    def to_dict(self) -> dict:
        def pose(p):
            return {"x": p.x, "y": p.y, "theta": p.theta}

        return {
            "estimate": pose(self.estimate),
            "psi": self.psi_of_estimate,
            "hypothesis_count": self.hypothesis_count,
            "candidates": [
                {
                    "initial": pose(c.initial),
                    "initial_psi": c.initial_psi,
                    "pose": pose(c.pose),
                    "psi": c.psi,
                    "converged": c.converged,
                    "iterations": c.iterations,
                    "residual": c.residual if math.isfinite(c.residual) else None,
                }
                for c in self.candidates
            ],
            "timing_ms": {k: v * 1e3 for k, v in self.timing.items()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def location_count(area: float, d_l: float) -> int:
    # guard against products like 40 * 2.4999999999999996
    return int(math.floor(d_l * area + 1e-9))


def disperse_hypotheses(grid: OccupancyGrid, d_l: float, d_alpha: int, rng: np.random.Generator) -> np.ndarray:
    """Pose hypotheses over free space, shape ``(floor(d_l * A) * d_alpha, 3)``.

    Each location gets a random base heading fanned out into ``d_alpha``
    equispaced headings; rows for one location are contiguous.
    """
    area = free_area(grid)
    if area <= 0:
        raise NoFreeSpaceError("map has no free space")
    n_loc = location_count(area, d_l)
    if n_loc == 0:
        return np.empty((0, 3))
    pts = sample_free_points(grid, n_loc, rng)
    base = rng.uniform(-math.pi, math.pi, size=n_loc)
    fan = np.arange(d_alpha) * (TWO_PI / d_alpha)
    headings = wrap_angle(base[:, None] + fan[None, :]).ravel()
    out = np.empty((n_loc * d_alpha, 3))
    out[:, 0] = np.repeat(pts[:, 0], d_alpha)
    out[:, 1] = np.repeat(pts[:, 1], d_alpha)
    out[:, 2] = headings
    return out


def estimate_error(estimate: Pose, truth: Pose) -> Tuple[float, float, float]:
    """``(location error, |wrapped orientation error|, combined)``."""
    dl = math.hypot(truth.x - estimate.x, truth.y - estimate.y)
    dth = abs(wrap_angle(truth.theta - estimate.theta))
    return dl, dth, math.hypot(dl, dth)


def identity_matcher(scan_r, grid, pose, icp) -> MatchResult:
    """A matcher that never moves the pose; isolates the ranking stage."""
    return MatchResult(pose, (0.0, 0.0, 0.0), 0, True, 0.0)


def cbgl(
    scan_r: RangeScan,
    grid: OccupancyGrid,
    config: CbglConfig = CbglConfig(),
    matcher: Optional[Matcher] = None,
    hypotheses: Optional[np.ndarray] = None,
) -> CbglResult:
    """Localise the sensor that measured ``scan_r`` within ``grid``.

    ``hypotheses`` overrides dispersal (useful for experiments that share a
    hypothesis set); otherwise they are drawn from ``config.seed``.
    """
    timing = {s: 0.0 for s in STAGES}
    t0 = time.perf_counter()
    if hypotheses is None:
        rng = np.random.default_rng(config.seed)
        hypotheses = disperse_hypotheses(grid, config.d_l, config.d_alpha, rng)
    if hypotheses.shape[0] == 0:
        raise NoFreeSpaceError("no hypotheses could be dispersed (free area too small for d_l)")
    timing["dispersal"] = time.perf_counter() - t0

    stage = {}
    idx, psi1 = bottom_k_indices(scan_r, grid, hypotheses, config.k, timing=stage)
    timing["field_evaluation"] = stage["field_evaluation"]
    timing["ranking"] = stage["ranking"]
    h1 = array_to_poses(hypotheses[idx])

    t0 = time.perf_counter()
    if matcher is None and config.sm2_passes == 1:
        matcher = sm2
    elif matcher is None:
        def matcher(s, g, p, c):
            return sm2(s, g, p, c, passes=config.sm2_passes)
    matches = [matcher(scan_r, grid, p, config.icp) for p in h1]
    # non-converged candidates keep their uncorrected pose
    h2 = [m.corrected_pose if m.converged else p for m, p in zip(matches, h1)]
    timing["sm2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    psi2 = psi_field(scan_r, grid, h2).psi
    best = int(np.argmin(psi2))  # first minimum: stable tie-break
    timing["final_selection"] = time.perf_counter() - t0

    candidates = tuple(
        Candidate(p1, float(v1), p2, float(v2), m.converged, m.iterations, float(m.residual))
        for p1, v1, p2, v2, m in zip(h1, psi1, h2, psi2, matches)
    )
    return CbglResult(h2[best], float(psi2[best]), candidates, int(hypotheses.shape[0]), timing)


def with_seed(config: CbglConfig, seed: int) -> CbglConfig:
    return replace(config, seed=int(seed))
