"""Independent reference implementations used by the tests."""

import math

import numpy as np
from numba import njit

from cbgl.grid_map import FREE


def _directions(pose, n_rays, angular_range):
    n = np.arange(n_rays)
    return pose.theta - angular_range / 2 + angular_range * n / n_rays


@njit(cache=True)
def _march(state, res, ox, oy, oth, px, py, angles, r_max, step):
    h, w = state.shape
    c, s = math.cos(oth), math.sin(oth)
    out = np.empty(angles.shape[0])
    for n in range(angles.shape[0]):
        dx, dy = math.cos(angles[n]), math.sin(angles[n])
        out[n] = r_max
        i = 0
        while True:
            t = i * step
            if t > r_max:
                break
            qx, qy = px + t * dx - ox, py + t * dy - oy
            col = math.floor((c * qx + s * qy) / res)
            row = math.floor((-s * qx + c * qy) / res)
            if col < 0 or row < 0 or col >= w or row >= h or state[row, col] != 0:
                out[n] = min(t, r_max)
                break
            i += 1
    return out


def march_ranges(grid, pose, n_rays, angular_range, r_max, step_frac=0.1):
    """Fixed-step ray marching: distance of the first sample in a non-free or out-of-bounds cell."""
    o = grid.origin
    return _march(np.asarray(grid.state), grid.resolution, o.x, o.y, o.theta, pose.x, pose.y,
                  _directions(pose, n_rays, angular_range), float(r_max), grid.resolution * step_frac)


def exact_ranges(grid, pose, n_rays, angular_range, r_max):
    """Slab intersection of each ray with every blocked cell and the grid boundary.

    Assumes an unrotated origin.
    """
    assert grid.origin.theta == 0.0
    res = grid.resolution
    rows, cols = np.nonzero(grid.state != FREE)
    x0 = grid.origin.x + cols * res
    y0 = grid.origin.y + rows * res
    out = np.empty(n_rays)
    for n, a in enumerate(_directions(pose, n_rays, angular_range)):
        dx, dy = math.cos(a), math.sin(a)
        with np.errstate(divide="ignore", invalid="ignore"):
            tx = np.sort(np.stack([(x0 - pose.x) / dx, (x0 + res - pose.x) / dx]), axis=0)
            ty = np.sort(np.stack([(y0 - pose.y) / dy, (y0 + res - pose.y) / dy]), axis=0)
        if dx == 0.0:
            inside = (pose.x >= x0) & (pose.x < x0 + res)
            tx = np.where(inside, np.array([[-np.inf], [np.inf]]), np.inf)
        if dy == 0.0:
            inside = (pose.y >= y0) & (pose.y < y0 + res)
            ty = np.where(inside, np.array([[-np.inf], [np.inf]]), np.inf)
        t_in = np.maximum(tx[0], ty[0])
        t_out = np.minimum(tx[1], ty[1])
        ok = (t_in < t_out) & (t_out > 0)
        best = t_in[ok].min() if ok.any() else np.inf
        # leaving the grid counts as a hit on its boundary
        x1 = grid.origin.x + grid.width * res
        y1 = grid.origin.y + grid.height * res
        exits = []
        if dx > 0:
            exits.append((x1 - pose.x) / dx)
        elif dx < 0:
            exits.append((grid.origin.x - pose.x) / dx)
        if dy > 0:
            exits.append((y1 - pose.y) / dy)
        elif dy < 0:
            exits.append((grid.origin.y - pose.y) / dy)
        best = min(best, min(exits))
        out[n] = min(max(best, 0.0), r_max)
    return out


def chord_in_hit_cell(grid, pose, bearing, t):
    """Length of the ray segment inside the cell entered at distance ``t``."""
    gx, gy = grid.world_to_grid(pose.x, pose.y)
    dx, dy = math.cos(bearing - grid.origin.theta), math.sin(bearing - grid.origin.theta)
    tc = t / grid.resolution + 1e-7
    cx, cy = math.floor(gx + tc * dx), math.floor(gy + tc * dy)
    lo, hi = -np.inf, np.inf
    for o, d, c in ((gx, dx, cx), (gy, dy, cy)):
        if d == 0:
            continue
        a, b = (c - o) / d, (c + 1 - o) / d
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    return (hi - lo) * grid.resolution


def naive_caer(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += abs(x - y)
    return total
