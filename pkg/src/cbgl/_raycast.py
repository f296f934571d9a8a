"""Numba kernels for grid ray casting and CAER accumulation.

All distances inside the kernels are in grid units (cells). Positions are
relative to the grid origin and already rotated into the grid frame.
Parallel loops run over hypotheses only; each CAER sum is accumulated
sequentially over rays so results do not depend on the thread count.
"""

import math

import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is often too old; prefer OpenMP and avoid the warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# only skip through open space when the jump is worth a re-initialisation
_SKIP_MIN = 3.0
# cell centre to any point in the cell is at most sqrt(2)/2; two of those
_SKIP_MARGIN = 1.5


@njit(cache=True, inline="always")
def cast_ray(clearance, px, py, dx, dy, tmax):
    """Distance (cells) to the entry face of the first blocked cell, capped at ``tmax``.

    ``clearance`` is zero exactly on blocked cells. Leaving the grid counts as
    a hit at the boundary.
    """
    h, w = clearance.shape
    ix = int(math.floor(px))
    iy = int(math.floor(py))
    if ix < 0 or iy < 0 or ix >= w or iy >= h:
        return 0.0
    c = clearance[iy, ix]
    if c == 0.0:
        return 0.0

    sx = 1 if dx > 0.0 else -1
    sy = 1 if dy > 0.0 else -1
    tdx = 1.0 / abs(dx) if dx != 0.0 else np.inf
    tdy = 1.0 / abs(dy) if dy != 0.0 else np.inf

    t = 0.0
    if dx > 0.0:
        tmx = (ix + 1 - px) * tdx
    elif dx < 0.0:
        tmx = (px - ix) * tdx
    else:
        tmx = np.inf
    if dy > 0.0:
        tmy = (iy + 1 - py) * tdy
    elif dy < 0.0:
        tmy = (py - iy) * tdy
    else:
        tmy = np.inf

    while True:
        if c > _SKIP_MIN:
            # no blocked cell within c - sqrt(2) of any point of this cell
            t = t + (c - _SKIP_MARGIN)
            if t >= tmax:
                return tmax
            qx = px + t * dx
            qy = py + t * dy
            ix = int(math.floor(qx))
            iy = int(math.floor(qy))
            if dx > 0.0:
                tmx = t + (ix + 1 - qx) * tdx
            elif dx < 0.0:
                tmx = t + (qx - ix) * tdx
            if dy > 0.0:
                tmy = t + (iy + 1 - qy) * tdy
            elif dy < 0.0:
                tmy = t + (qy - iy) * tdy
            c = clearance[iy, ix]
            continue
        if tmx < tmy:
            t = tmx
            ix += sx
            tmx += tdx
        else:
            t = tmy
            iy += sy
            tmy += tdy
        if t >= tmax:
            return tmax
        if ix < 0 or iy < 0 or ix >= w or iy >= h:
            return t
        c = clearance[iy, ix]
        if c == 0.0:
            return t


@njit(cache=True, inline="always")
def _range(clearance, px, py, ch, sh, cb, sb, tmax, res, r_max):
    """Range in metres along heading (ch, sh) rotated by bearing (cb, sb)."""
    dx = ch * cb - sh * sb
    dy = sh * cb + ch * sb
    t = cast_ray(clearance, px, py, dx, dy, tmax)
    # no-return rays must come out as exactly r_max
    if t >= tmax:
        return r_max
    r = t * res
    return r if r < r_max else r_max


@njit(cache=True, parallel=True)
def cast_scans(clearance, res, xs, ys, ths, bearings, r_max):
    """Ranges (metres) for every hypothesis and bearing, shape ``(n_h, n_s)``."""
    n_h = xs.shape[0]
    n_s = bearings.shape[0]
    out = np.empty((n_h, n_s))
    tmax = r_max / res
    cb = np.cos(bearings)
    sb = np.sin(bearings)
    for i in prange(n_h):
        px, py = xs[i] / res, ys[i] / res
        ch, sh = math.cos(ths[i]), math.sin(ths[i])
        for n in range(n_s):
            out[i, n] = _range(clearance, px, py, ch, sh, cb[n], sb[n], tmax, res, r_max)
    return out


@njit(cache=True)
def abs_diff_sum(a, b):
    s = 0.0
    for n in range(a.shape[0]):
        s += abs(a[n] - b[n])
    return s


@njit(cache=True, parallel=True)
def psi_all(clearance, res, xs, ys, ths, bearings, ranges, r_max):
    """CAER of every hypothesis' map-scan against ``ranges``."""
    n_h = xs.shape[0]
    n_s = bearings.shape[0]
    out = np.empty(n_h)
    tmax = r_max / res
    cb = np.cos(bearings)
    sb = np.sin(bearings)
    for i in prange(n_h):
        px, py = xs[i] / res, ys[i] / res
        ch, sh = math.cos(ths[i]), math.sin(ths[i])
        s = 0.0
        for n in range(n_s):
            r = _range(clearance, px, py, ch, sh, cb[n], sb[n], tmax, res, r_max)
            s += abs(ranges[n] - r)
        out[i] = s
    return out


@njit(cache=True, parallel=True)
def psi_lower_bound(clearance, res, xs, ys, ths, bearings, ranges, r_max, stride):
    """Per-ray terms and partial CAER over rays ``0, stride, 2*stride, ...``.

    The partial sum is a lower bound of the full CAER.
    """
    n_h = xs.shape[0]
    n_s = bearings.shape[0]
    m_s = (n_s + stride - 1) // stride
    terms = np.empty((n_h, m_s))
    out = np.empty(n_h)
    tmax = r_max / res
    cb = np.cos(bearings)
    sb = np.sin(bearings)
    for i in prange(n_h):
        px, py = xs[i] / res, ys[i] / res
        ch, sh = math.cos(ths[i]), math.sin(ths[i])
        s = 0.0
        for m in range(m_s):
            n = m * stride
            r = _range(clearance, px, py, ch, sh, cb[n], sb[n], tmax, res, r_max)
            e = abs(ranges[n] - r)
            terms[i, m] = e
            s += e
        out[i] = s
    return terms, out


@njit(cache=True, parallel=True)
def psi_bounded(clearance, res, xs, ys, ths, bearings, ranges, r_max,
                stride, terms, bound, idx, tau):
    """Full CAER for hypotheses ``idx``, abandoned (inf) once it provably exceeds ``tau``.

    ``terms``/``bound`` come from :func:`psi_lower_bound`; the stored terms
    stand in for the remaining sampled rays. Completed sums are accumulated in
    ray order and are bit-identical to :func:`psi_all`.
    """
    m_h = idx.shape[0]
    n_s = bearings.shape[0]
    out = np.empty(m_h)
    tmax = r_max / res
    cb = np.cos(bearings)
    sb = np.sin(bearings)
    # covers rounding in the running sums
    limit = tau + 1e-9 * (abs(tau) + 1.0)
    for m in prange(m_h):
        i = idx[m]
        px, py = xs[i] / res, ys[i] / res
        ch, sh = math.cos(ths[i]), math.sin(ths[i])
        s = 0.0
        rest = bound[i]
        for n in range(n_s):
            if n % stride == 0:
                e = terms[i, n // stride]
                rest -= e
            else:
                r = _range(clearance, px, py, ch, sh, cb[n], sb[n], tmax, res, r_max)
                e = abs(ranges[n] - r)
            s += e
            if s > tau and s + max(rest, 0.0) > limit:
                s = np.inf
                break
        out[m] = s
    return out
