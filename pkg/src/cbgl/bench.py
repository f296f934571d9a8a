"""Synthetic floorplans, Monte Carlo localisation trials and diagnostics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .caer import psi_field, rank_field
from .grid_map import FREE, OCCUPIED, OccupancyGrid, free_area, free_cells
from .pipeline import STAGES, CbglConfig, cbgl, estimate_error
from .pose import Pose, wrap_angle
from .scan_geometry import simulate_measurement


class InfeasibleSpecError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    area: float = 200.0
    n_rooms: int = 6
    corridor_width: Tuple[float, float] = (1.2, 2.0)
    wall_thickness: float = 0.15
    resolution: float = 0.05
    clutter_density: float = 0.05
    seed: int = 0
    door_width: Tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if not (self.area > 0 and self.n_rooms >= 1 and self.wall_thickness > 0 and self.resolution > 0):
            raise InfeasibleSpecError(f"non-positive field in {self}")
        if self.clutter_density < 0:
            raise InfeasibleSpecError("clutter density must be non-negative")
        for lo, hi in (self.corridor_width, self.door_width):
            if not 0 < lo <= hi:
                raise InfeasibleSpecError(f"bad width range ({lo}, {hi})")


@dataclass(frozen=True)
class SensorModel:
    n_rays: int = 360
    angular_range: float = 2.0 * math.pi
    r_max: float = 10.0
    noise_sigma: float = 0.05


# -- environment generation --------------------------------------------------------

_MIN_ROOM = 2.0  # metres, smallest room side


def _split(length: int, parts: int, min_part: int, rng) -> List[int]:
    """Random cut positions dividing ``length`` cells into ``parts`` pieces of at least ``min_part``."""
    slack = length - parts * min_part
    if slack < 0:
        raise InfeasibleSpecError("rooms cannot fit")
    w = rng.dirichlet(np.full(parts, 2.0))
    sizes = min_part + np.floor(w * slack).astype(int)
    sizes[-1] = length - sizes[:-1].sum()
    return list(np.cumsum(sizes)[:-1])


def generate_environment(spec: EnvSpec) -> OccupancyGrid:
    """Rectilinear floorplan: rooms off a corridor, one doorway per room, box clutter.

    Free space is a single 4-connected component. Deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    res = spec.resolution
    tw = max(1, int(round(spec.wall_thickness / res)))
    cells = lambda m: int(round(m / res))  # noqa: E731

    if spec.n_rooms == 1:
        W = H = cells(math.sqrt(spec.area))
    else:
        aspect = rng.uniform(1.2, 1.8)
        W = cells(math.sqrt(spec.area * aspect))
        H = cells(spec.area / (W * res))
    min_room = cells(_MIN_ROOM)
    state = np.full((H + 2 * tw, W + 2 * tw), OCCUPIED, dtype=np.int8)
    interior = state[tw:tw + H, tw:tw + W]  # view, [row, col]
    interior[:] = FREE
    doors: List[Tuple[int, int, int, int]] = []  # (r0, r1, c0, c1) in interior coordinates

    def door_span(lo, hi):
        width = cells(rng.uniform(*spec.door_width))
        width = min(width, hi - lo - 2)
        start = int(rng.integers(lo + 1, hi - width)) if hi - width > lo + 1 else lo
        return start, start + width

    def vwall(col, r0, r1):
        c0 = col - tw // 2
        interior[r0:r1, c0:c0 + tw] = OCCUPIED
        return c0

    def hwall(row, c0, c1):
        r0 = row - tw // 2
        interior[r0:r0 + tw, c0:c1] = OCCUPIED
        return r0

    if spec.n_rooms == 2:
        if W < 2 * min_room:
            raise InfeasibleSpecError("rooms cannot fit")
        cut = _split(W, 2, min_room, rng)[0]
        c0 = vwall(cut, 0, H)
        d0, d1 = door_span(0, H)
        interior[d0:d1, c0:c0 + tw] = FREE
        doors.append((d0, d1, c0, c0 + tw))
    elif spec.n_rooms >= 3:
        cw = cells(rng.uniform(*spec.corridor_width))
        depth = H - cw - 2 * tw
        if depth < 2 * min_room:
            raise InfeasibleSpecError("rooms cannot fit beside the corridor")
        bottom = min_room + int(rng.integers(0, depth - 2 * min_room + 1))
        n_bottom = spec.n_rooms // 2
        n_top = spec.n_rooms - n_bottom
        # corridor occupies rows [bottom + tw, bottom + tw + cw)
        row_lo = bottom + tw // 2
        row_hi = bottom + tw + cw + tw // 2 + (tw % 2)
        r_lo = hwall(row_lo, 0, W)
        r_hi = hwall(row_hi, 0, W)
        for n_side, (ra, rb), wall_r in (
            (n_bottom, (0, r_lo), r_lo),
            (n_top, (r_hi + tw, H), r_hi),
        ):
            cuts = _split(W, n_side, min_room, rng)
            edges = [0] + cuts + [W]
            for c in cuts:
                vwall(c, ra, rb)
            for a, b in zip(edges[:-1], edges[1:]):
                lo = a + (tw + 1) // 2 if a > 0 else 0
                hi = b - (tw + 1) // 2 if b < W else W
                d0, d1 = door_span(lo, hi)
                interior[wall_r:wall_r + tw, d0:d1] = FREE
                doors.append((wall_r, wall_r + tw, d0, d1))

    _add_clutter(interior, doors, spec, rng)
    if not _connected(interior):
        raise InfeasibleSpecError("generated free space is not connected")
    origin = Pose(-tw * res, -tw * res, 0.0)
    return OccupancyGrid(state, res, origin)


def _connected(interior: np.ndarray) -> bool:
    _, n = ndimage.label(interior == FREE)
    return n == 1


def _add_clutter(interior, doors, spec: EnvSpec, rng) -> None:
    res = spec.resolution
    n_boxes = int(round(spec.clutter_density * spec.area))
    if n_boxes == 0:
        return
    keep_clear = np.zeros(interior.shape, dtype=bool)
    pad = int(round(0.6 / res))
    for r0, r1, c0, c1 in doors:
        keep_clear[max(0, r0 - pad):r1 + pad, max(0, c0 - pad):c1 + pad] = True
    H, W = interior.shape
    for _ in range(n_boxes):
        for _attempt in range(20):
            bh = int(round(rng.uniform(0.3, 0.9) / res))
            bw = int(round(rng.uniform(0.3, 0.9) / res))
            r = int(rng.integers(0, max(1, H - bh)))
            c = int(rng.integers(0, max(1, W - bw)))
            region = interior[r:r + bh, c:c + bw]
            if keep_clear[r:r + bh, c:c + bw].any() or not (region == FREE).all():
                continue
            saved = region.copy()
            region[:] = OCCUPIED
            if _connected(interior):
                break
            region[:] = saved


def generate_twin_rooms(
    width: float = 5.0,
    height: float = 4.0,
    resolution: float = 0.05,
    wall_thickness: float = 0.15,
    n_boxes: int = 3,
    seed: int = 0,
) -> OccupancyGrid:
    """Two identical, disjoint rooms side by side (identical clutter in each)."""
    rng = np.random.default_rng(seed)
    tw = max(1, int(round(wall_thickness / resolution)))
    W, H = int(round(width / resolution)), int(round(height / resolution))
    room = np.full((H, W), FREE, dtype=np.int8)
    for _ in range(n_boxes):
        bh = int(round(rng.uniform(0.3, 0.8) / resolution))
        bw = int(round(rng.uniform(0.3, 0.8) / resolution))
        r = int(rng.integers(0, H - bh))
        c = int(rng.integers(0, W - bw))
        trial = room.copy()
        trial[r:r + bh, c:c + bw] = OCCUPIED
        if _connected(trial):
            room = trial
    state = np.full((H + 2 * tw, 2 * W + 3 * tw), OCCUPIED, dtype=np.int8)
    state[tw:tw + H, tw:tw + W] = room
    state[tw:tw + H, 2 * tw + W:2 * tw + 2 * W] = room
    return OccupancyGrid(state, resolution, Pose(-tw * resolution, -tw * resolution, 0.0))


# -- trials ----------------------------------------------------------------------

def trial_seed(master_seed: int, pose_index: int, trial_index: int) -> int:
    """Order-independent per-trial seed."""
    ss = np.random.SeedSequence([int(master_seed), int(pose_index), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def sample_true_poses(
    grid: OccupancyGrid,
    n: int,
    rng: np.random.Generator,
    min_clearance: float = 0.3,
    min_separation: float = 1.0,
) -> List[Pose]:
    """Poses at least ``min_clearance`` from obstacles and, where possible, ``min_separation`` apart."""
    cols, rows = free_cells(grid)
    clear = grid.clearance[rows, cols] * grid.resolution
    ok = clear >= min_clearance + grid.resolution
    if not ok.any():
        ok = np.ones_like(ok)
    cols, rows = cols[ok], rows[ok]
    poses: List[Pose] = []
    attempts = 0
    while len(poses) < n:
        i = int(rng.integers(0, cols.size))
        off = rng.random(2)
        gx, gy = (cols[i] + off[0]) * grid.resolution, (rows[i] + off[1]) * grid.resolution
        c, s = math.cos(grid.origin.theta), math.sin(grid.origin.theta)
        x = grid.origin.x + c * gx - s * gy
        y = grid.origin.y + s * gx + c * gy
        th = rng.uniform(-math.pi, math.pi)
        attempts += 1
        sep = min_separation if attempts < 200 * n else 0.0
        if all(math.hypot(x - p.x, y - p.y) >= sep for p in poses):
            poses.append(Pose(x, y, th))
    return poses


@dataclass
class TrialRecord:
    pose_index: int
    trial_index: int
    seed: int
    true_x: float
    true_y: float
    true_theta: float
    est_x: float = float("nan")
    est_y: float = float("nan")
    est_theta: float = float("nan")
    location_error: float = float("nan")
    orientation_error: float = float("nan")
    combined_error: float = float("nan")
    psi: float = float("nan")
    hypothesis_count: int = 0
    total_time: float = float("nan")
    dispersal: float = float("nan")
    field_evaluation: float = float("nan")
    ranking: float = float("nan")
    sm2: float = float("nan")
    final_selection: float = float("nan")
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


RECORD_FIELDS = [f for f in TrialRecord.__dataclass_fields__]


def aggregate(records: Sequence[TrialRecord], delta_l: float = 0.5, delta_theta: float = 0.4) -> dict:
    """Summary statistics; failed trials count as outliers."""
    n = len(records)
    ok = [r for r in records if not r.failed]
    loc = np.array([r.location_error for r in ok])
    ori = np.array([r.orientation_error for r in ok])
    tt = np.array([r.total_time for r in ok])
    field_t = np.array([r.field_evaluation for r in ok])

    def stat(a, fn):
        return float(fn(a)) if a.size else float("nan")

    loc_in = int(np.count_nonzero(loc <= delta_l)) if ok else 0
    both_in = int(np.count_nonzero((loc <= delta_l) & (ori <= delta_theta))) if ok else 0
    return {
        "n_trials": n,
        "n_failed": n - len(ok),
        "delta_l": delta_l,
        "delta_theta": delta_theta,
        "location_inlier_proportion": loc_in / n if n else float("nan"),
        "inlier_proportion": both_in / n if n else float("nan"),
        "location_error_mean": stat(loc, np.mean),
        "location_error_std": stat(loc, np.std),
        "orientation_error_mean": stat(ori, np.mean),
        "orientation_error_std": stat(ori, np.std),
        "time_mean": stat(tt, np.mean),
        "time_std": stat(tt, np.std),
        "time_p50": stat(tt, np.median),
        "time_p90": stat(tt, lambda a: np.quantile(a, 0.9)),
        "time_max": stat(tt, np.max),
        "field_share": float(field_t.sum() / tt.sum()) if tt.size and tt.sum() > 0 else float("nan"),
    }


@dataclass
class TrialReport:
    records: List[TrialRecord]
    delta_l: float = 0.5
    delta_theta: float = 0.4
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = aggregate(self.records, self.delta_l, self.delta_theta)

    def recompute(self) -> dict:
        return aggregate(self.records, self.delta_l, self.delta_theta)

    def inlier_proportion(self, delta_l: float, delta_theta: Optional[float] = None) -> float:
        n = len(self.records)
        if n == 0:
            return float("nan")
        hits = 0
        for r in self.records:
            if r.failed:
                continue
            if r.location_error <= delta_l and (delta_theta is None or r.orientation_error <= delta_theta):
                hits += 1
        return hits / n

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=RECORD_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            row = asdict(r)
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self, **kw) -> str:
        return json.dumps(_json_safe(self.aggregates), **kw)

    def summary_table(self) -> str:
        a = self.aggregates
        lines = [
            f"{'':6}{'Position err [m]':>22}{'Orientation err [rad]':>26}{'Exec. time [s]':>22}",
            f"{'':6}{'mean':>11}{'std':>11}{'mean':>13}{'std':>13}{'mean':>11}{'std':>11}",
            f"{'CBGL':6}{a['location_error_mean']:>11.3f}{a['location_error_std']:>11.3f}"
            f"{a['orientation_error_mean']:>13.3f}{a['orientation_error_std']:>13.3f}"
            f"{a['time_mean']:>11.2f}{a['time_std']:>11.2f}",
            f"inliers (loc <= {a['delta_l']} m): {100 * a['location_inlier_proportion']:.1f}%   "
            f"inliers (loc <= {a['delta_l']} m, ori <= {a['delta_theta']} rad): {100 * a['inlier_proportion']:.1f}%   "
            f"trials: {a['n_trials']} (failed {a['n_failed']})",
        ]
        return "\n".join(lines)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def load_trial_csv(text: str) -> List[TrialRecord]:
    types = {k: f.type for k, f in TrialRecord.__dataclass_fields__.items()}
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        kw = {}
        for k, v in row.items():
            t = types[k]
            if t in ("int", int):
                kw[k] = int(v)
            elif t in ("float", float):
                kw[k] = float(v)
            else:
                kw[k] = v
        out.append(TrialRecord(**kw))
    return out


def run_single_trial(
    grid: OccupancyGrid,
    sensor: SensorModel,
    config: CbglConfig,
    true_pose: Pose,
    master_seed: int,
    pose_index: int,
    trial_index: int,
) -> TrialRecord:
    seed = trial_seed(master_seed, pose_index, trial_index)
    rec = TrialRecord(pose_index, trial_index, seed, true_pose.x, true_pose.y, true_pose.theta)
    try:
        rng = np.random.default_rng(seed)
        scan = simulate_measurement(
            grid, true_pose, sensor.n_rays, sensor.angular_range, sensor.r_max, sensor.noise_sigma, rng
        )
        cfg = replace(config, seed=int(rng.integers(0, 2 ** 63 - 1)))
        res = cbgl(scan, grid, cfg)
    except Exception as exc:  # a failed trial is recorded, not fatal
        rec.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        return rec
    dl, dth, comb = estimate_error(res.estimate, true_pose)
    rec.est_x, rec.est_y, rec.est_theta = res.estimate.as_tuple()
    rec.location_error, rec.orientation_error, rec.combined_error = dl, dth, comb
    rec.psi = res.psi_of_estimate
    rec.hypothesis_count = res.hypothesis_count
    for s in STAGES:
        setattr(rec, s, res.timing[s])
    rec.total_time = res.total_time
    return rec


def run_trials(
    grid: OccupancyGrid,
    sensor: SensorModel,
    config: CbglConfig,
    n_poses: int,
    n_trials_per_pose: int,
    seed: int,
    delta_l: float = 0.5,
    delta_theta: float = 0.4,
    true_poses: Optional[Sequence[Pose]] = None,
    progress=None,
) -> TrialReport:
    """Independent localisation attempts from sampled true poses."""
    if true_poses is None:
        true_poses = sample_true_poses(grid, n_poses, np.random.default_rng([int(seed), 0x5EED]))
    records = []
    for i, pose in enumerate(true_poses):
        for j in range(n_trials_per_pose):
            rec = run_single_trial(grid, sensor, config, pose, seed, i, j)
            records.append(rec)
            if progress is not None:
                progress(rec)
    return TrialReport(records, delta_l, delta_theta)


# -- partition diagnostic ---------------------------------------------------------

@dataclass(frozen=True)
class PartitionDiagnostic:
    psi_0: float
    delta_0: float
    n_v: int
    n_x: int
    n_w: int
    admissible_in_V: bool
    labels: np.ndarray = field(repr=False, compare=False)  # per hypothesis: 'V', 'X' or 'W'


def partition_diagnostic(
    scan_r,
    grid: OccupancyGrid,
    hypotheses,
    true_pose: Pose,
    k: int,
    delta_l: float = 0.5,
    delta_theta: float = 0.4,
) -> PartitionDiagnostic:
    """Split hypotheses into V (low CAER, low error), W (high CAER, low error) and X (the rest)."""
    pf = psi_field(scan_r, grid, hypotheses)
    n = len(pf)
    if k < 1 or k > n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    ranked = rank_field(pf)
    psi = pf.psi
    psi_0 = float(psi[ranked.rank_permutation[k - 1]])
    H = pf.hypotheses
    loc = np.hypot(H[:, 0] - true_pose.x, H[:, 1] - true_pose.y)
    ori = np.abs(wrap_angle(true_pose.theta - H[:, 2]))
    comb = np.hypot(loc, ori)
    low = psi <= psi_0
    delta_0 = float(comb[low].max())
    near = comb <= delta_0
    v = low & near
    w = ~low & near
    x = ~(v | w)
    labels = np.full(n, "X")
    labels[v] = "V"
    labels[w] = "W"
    delta = math.hypot(delta_l, delta_theta)
    admissible = bool(np.any(v & (loc <= delta_l) & (ori <= delta_theta) & (comb <= delta)))
    return PartitionDiagnostic(psi_0, delta_0, int(v.sum()), int(x.sum()), int(w.sum()), admissible, labels)


# -- timing profile ------------------------------------------------------------

def env_for_area(area: float, seed: int, resolution: float = 0.05, clutter_density: float = 0.05) -> OccupancyGrid:
    """A floorplan whose room count scales with area (about one room per 30 m^2)."""
    n_rooms = max(1, int(round(area / 30.0)))
    while True:
        try:
            return generate_environment(
                EnvSpec(area=area, n_rooms=n_rooms, resolution=resolution,
                        clutter_density=clutter_density, seed=seed)
            )
        except InfeasibleSpecError:
            if n_rooms == 1:
                raise
            n_rooms -= 1


def timing_profile(
    areas: Sequence[float],
    sensor: SensorModel,
    config: CbglConfig,
    seed: int,
    n_trials: int = 5,
    resolution: float = 0.05,
) -> List[dict]:
    """Mean runtime and stage shares per environment area."""
    if any(a <= 0 for a in areas) or list(areas) != sorted(areas):
        raise ValueError("areas must be positive and ascending")
    rows = []
    for i, area in enumerate(areas):
        grid = env_for_area(area, seed + i, resolution)
        report = run_trials(grid, sensor, config, n_trials, 1, seed + i)
        ok = [r for r in report.records if not r.failed]
        total = np.array([r.total_time for r in ok])
        field_t = np.array([r.field_evaluation for r in ok])
        match_t = np.array([r.sm2 for r in ok])
        rows.append({
            "area": float(area),
            "free_area": free_area(grid),
            "hypothesis_count": ok[0].hypothesis_count if ok else 0,
            "n_trials": len(ok),
            "mean_runtime_s": float(total.mean()) if ok else float("nan"),
            "std_runtime_s": float(total.std()) if ok else float("nan"),
            "map_scan_share": float(field_t.sum() / total.sum()) if ok else float("nan"),
            "pre_match_share": float(1.0 - match_t.sum() / total.sum()) if ok else float("nan"),
            "location_error_mean": float(np.mean([r.location_error for r in ok])) if ok else float("nan"),
        })
    return rows


PROFILE_FIELDS = [
    "area", "free_area", "hypothesis_count", "n_trials", "mean_runtime_s",
    "std_runtime_s", "map_scan_share", "pre_match_share", "location_error_mean",
]


def profile_to_csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=PROFILE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def load_profile_csv(text: str) -> List[dict]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append({k: (int(v) if k in ("hypothesis_count", "n_trials") else float(v)) for k, v in row.items()})
    return out
