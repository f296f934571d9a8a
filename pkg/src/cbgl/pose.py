from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Wrap angle(s) to ``[-pi, +pi)``."""
    if np.ndim(theta) == 0:
        w = (float(theta) + math.pi) % TWO_PI - math.pi
        # float modulo can return exactly +pi for inputs a hair below -pi
        return -math.pi if w >= math.pi else w
    w = np.mod(np.asarray(theta, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    return np.where(w >= math.pi, -math.pi, w)


@dataclass(frozen=True)
class Pose:
    """Planar pose ``(x, y, theta)`` in the map frame; theta is wrapped on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def compose(self, delta) -> "Pose":
        """``self (+) delta`` with ``delta = (dx, dy, dtheta)`` expressed in this pose's frame."""
        dx, dy, dth = delta
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose(self.x + c * dx - s * dy, self.y + s * dx + c * dy, self.theta + dth)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def as_tuple(self):
        return (self.x, self.y, self.theta)

    @classmethod
    def from_array(cls, a) -> "Pose":
        x, y, th = a
        return cls(x, y, th)


def poses_to_array(poses) -> np.ndarray:
    """List of :class:`Pose` (or an ``(n, 3)`` array) to a float ``(n, 3)`` array."""
    if isinstance(poses, np.ndarray):
        arr = np.asarray(poses, dtype=np.float64)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"pose array must have shape (n, 3), got {arr.shape}")
        return arr
    poses = list(poses)
    if not poses:
        return np.empty((0, 3))
    return np.array([p.as_tuple() if isinstance(p, Pose) else tuple(p) for p in poses], dtype=np.float64)


def array_to_poses(arr) -> list:
    return [Pose(*row) for row in np.asarray(arr, dtype=np.float64)]
