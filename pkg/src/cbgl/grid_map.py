"""Occupancy-grid maps: P5 graymap + key/value sidecar I/O and free-space queries."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from .pose import Pose

FREE = 0
OCCUPIED = 1
UNKNOWN = -1

# pixel values used when writing maps
_FREE_PIXEL = 254
_OCCUPIED_PIXEL = 0
_UNKNOWN_PIXEL = 205

SIDECAR_SUFFIX = ".map.txt"


class MapFormatError(ValueError):
    """Raised for malformed raster or metadata input."""


class NoFreeSpaceError(ValueError):
    """Raised when an operation needs free cells and the map has none."""


@dataclass(frozen=True)
class MapMetadata:
    resolution: float
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    occupied_threshold: float = 0.65
    free_threshold: float = 0.196
    negate: bool = False

    def __post_init__(self):
        if not self.resolution > 0:
            raise MapFormatError(f"resolution must be positive, got {self.resolution}")
        if not 0.0 <= self.free_threshold < self.occupied_threshold <= 1.0:
            raise MapFormatError(
                "thresholds must satisfy 0 <= free < occupied <= 1, got "
                f"free={self.free_threshold} occupied={self.occupied_threshold}"
            )

    def to_text(self) -> str:
        ox, oy, oth = self.origin
        lines = [
            f"resolution: {self.resolution!r}",
            f"origin_x: {ox!r}",
            f"origin_y: {oy!r}",
            f"origin_theta: {oth!r}",
            f"occupied_thresh: {self.occupied_threshold!r}",
            f"free_thresh: {self.free_threshold!r}",
            f"negate: {int(self.negate)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MapMetadata":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise MapFormatError(f"metadata line {lineno}: expected 'key: value', got {raw!r}")
            key, value = (s.strip() for s in line.split(":", 1))
            values[key] = value
        if "resolution" not in values:
            raise MapFormatError("metadata is missing 'resolution'")
        try:
            negate = values.get("negate", "0").lower() in ("1", "true", "yes")
            return cls(
                resolution=float(values["resolution"]),
                origin=(
                    float(values.get("origin_x", 0.0)),
                    float(values.get("origin_y", 0.0)),
                    float(values.get("origin_theta", 0.0)),
                ),
                occupied_threshold=float(values.get("occupied_thresh", 0.65)),
                free_threshold=float(values.get("free_thresh", 0.196)),
                negate=negate,
            )
        except ValueError as exc:
            if isinstance(exc, MapFormatError):
                raise
            raise MapFormatError(f"bad metadata value: {exc}") from exc


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Classified occupancy grid.

    ``state[row, col]`` holds FREE, OCCUPIED or UNKNOWN; row 0 is the bottom
    of the map (smallest y). Cell ``(col, row)`` covers
    ``[col, col + 1) x [row, row + 1)`` in grid units, scaled by ``resolution``
    and placed in the map frame by ``origin``.
    """

    state: np.ndarray
    resolution: float
    origin: Pose = Pose(0.0, 0.0, 0.0)
    occupancy: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        state = np.ascontiguousarray(self.state, dtype=np.int8)
        if state.ndim != 2 or state.shape[0] == 0 or state.shape[1] == 0:
            raise MapFormatError(f"grid must be 2-D with positive dimensions, got shape {state.shape}")
        if not np.isin(state, (FREE, OCCUPIED, UNKNOWN)).all():
            raise MapFormatError("grid state contains values other than FREE/OCCUPIED/UNKNOWN")
        if not self.resolution > 0:
            raise MapFormatError(f"resolution must be positive, got {self.resolution}")
        state.setflags(write=False)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "resolution", float(self.resolution))
        if self.occupancy is not None:
            occ = np.array(self.occupancy, dtype=np.float64)
            occ.setflags(write=False)
            object.__setattr__(self, "occupancy", occ)

    @property
    def width(self) -> int:
        return self.state.shape[1]

    @property
    def height(self) -> int:
        return self.state.shape[0]

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(self.state == FREE))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and np.array_equal(self.state, other.state)
        )

    __hash__ = None

    # -- frames ---------------------------------------------------------
    def world_to_grid(self, x, y):
        """Map-frame metres to continuous grid units (cells) relative to the origin."""
        dx = np.asarray(x, dtype=np.float64) - self.origin.x
        dy = np.asarray(y, dtype=np.float64) - self.origin.y
        c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
        gx = (c * dx + s * dy) / self.resolution
        gy = (-s * dx + c * dy) / self.resolution
        return gx, gy

    def world_to_cell(self, x, y):
        """Map-frame metres to integer ``(col, row)``; may be out of bounds."""
        gx, gy = self.world_to_grid(x, y)
        return np.floor(gx).astype(np.int64), np.floor(gy).astype(np.int64)

    def cell_to_world(self, col, row):
        """Centre of cell ``(col, row)`` in map-frame metres."""
        gx = (np.asarray(col, dtype=np.float64) + 0.5) * self.resolution
        gy = (np.asarray(row, dtype=np.float64) + 0.5) * self.resolution
        c, s = math.cos(self.origin.theta), math.sin(self.origin.theta)
        return self.origin.x + c * gx - s * gy, self.origin.y + s * gx + c * gy

    def in_bounds(self, col, row):
        col = np.asarray(col)
        row = np.asarray(row)
        return (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)

    # -- ray-casting support ---------------------------------------------
    @property
    def blocked(self) -> np.ndarray:
        """uint8 mask of non-free cells; unknown counts as blocked."""
        cached = self.__dict__.get("_blocked")
        if cached is None:
            cached = np.ascontiguousarray(self.state != FREE, dtype=np.uint8)
            cached.setflags(write=False)
            object.__setattr__(self, "_blocked", cached)
        return cached

    @property
    def clearance(self) -> np.ndarray:
        """Distance (cells) from each cell centre to the nearest blocked cell centre.

        The map border counts as blocked. Used by the ray caster to skip
        through open space.
        """
        cached = self.__dict__.get("_clearance")
        if cached is None:
            free = np.pad(self.state == FREE, 1, constant_values=False)
            cached = ndimage.distance_transform_edt(free)[1:-1, 1:-1]
            cached = np.ascontiguousarray(cached, dtype=np.float64)
            cached.setflags(write=False)
            object.__setattr__(self, "_clearance", cached)
        return cached

    def with_origin(self, origin: Pose) -> "OccupancyGrid":
        return OccupancyGrid(self.state, self.resolution, origin, self.occupancy)

    @classmethod
    def from_occupancy(
        cls,
        occupancy: np.ndarray,
        resolution: float,
        origin: Pose = Pose(0.0, 0.0, 0.0),
        occupied_threshold: float = 0.65,
        free_threshold: float = 0.196,
    ) -> "OccupancyGrid":
        """Classify a bottom-up probability array; NaN marks unknown."""
        occ = np.asarray(occupancy, dtype=np.float64)
        state = np.full(occ.shape, UNKNOWN, dtype=np.int8)
        state[occ > occupied_threshold] = OCCUPIED
        state[occ < free_threshold] = FREE
        return cls(state, resolution, origin, occ)


# -- PGM + sidecar I/O -----------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_pgm(data: bytes) -> Tuple[np.ndarray, int]:
    """Parse a binary P5 graymap. Returns ``(pixels[row, col], max_val)`` top-down."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise MapFormatError("raster must be bytes")
    data = bytes(data)
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise MapFormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise MapFormatError(f"not a binary P5 graymap (magic {tokens[0][:8]!r})")
    try:
        width, height, max_val = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MapFormatError(f"bad PGM header: {exc}") from exc
    if width <= 0 or height <= 0:
        raise MapFormatError(f"PGM has zero dimensions ({width}x{height})")
    if not 0 < max_val <= 255:
        raise MapFormatError(f"only 8-bit graymaps are supported (max value {max_val})")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MapFormatError("missing whitespace after PGM header")
    pos += 1
    n = width * height
    if len(data) - pos < n:
        raise MapFormatError(f"PGM raster truncated: expected {n} bytes, got {len(data) - pos}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos).reshape(height, width)
    return pixels.copy(), max_val


def write_pgm(pixels: np.ndarray, max_val: int = 255) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n{max_val}\n".encode("ascii") + pixels.tobytes()


def load_map(image_bytes: bytes, meta: MapMetadata) -> OccupancyGrid:
    """Build a classified grid from P5 bytes and their metadata."""
    pixels, max_val = read_pgm(image_bytes)
    values = pixels.astype(np.float64)
    if meta.negate:
        occ = values / max_val
    else:
        occ = (max_val - values) / max_val
    # image row 0 is the top of the map
    occ = np.flipud(occ)
    return OccupancyGrid.from_occupancy(
        occ,
        meta.resolution,
        Pose(*meta.origin),
        meta.occupied_threshold,
        meta.free_threshold,
    )


def grid_to_pgm(grid: OccupancyGrid) -> bytes:
    pixels = np.full(grid.state.shape, _UNKNOWN_PIXEL, dtype=np.uint8)
    pixels[grid.state == FREE] = _FREE_PIXEL
    pixels[grid.state == OCCUPIED] = _OCCUPIED_PIXEL
    return write_pgm(np.flipud(pixels))


def sidecar_path(pgm_path: Union[str, Path]) -> Path:
    p = Path(pgm_path)
    return p.with_name(p.stem + SIDECAR_SUFFIX) if p.suffix == ".pgm" else Path(str(p) + SIDECAR_SUFFIX)


def load_map_files(pgm_path: Union[str, Path]) -> OccupancyGrid:
    """Read ``<name>.pgm`` and its ``<name>.map.txt`` sidecar."""
    pgm_path = Path(pgm_path)
    meta = MapMetadata.from_text(sidecar_path(pgm_path).read_text())
    return load_map(pgm_path.read_bytes(), meta)


def save_map_files(grid: OccupancyGrid, pgm_path: Union[str, Path]) -> Tuple[Path, Path]:
    pgm_path = Path(pgm_path)
    meta = MapMetadata(
        resolution=grid.resolution,
        origin=(grid.origin.x, grid.origin.y, grid.origin.theta),
    )
    pgm_path.write_bytes(grid_to_pgm(grid))
    side = sidecar_path(pgm_path)
    side.write_text(meta.to_text())
    return pgm_path, side


# -- queries -------------------------------------------------------------------

def free_area(grid: OccupancyGrid) -> float:
    """Area of free space in square metres."""
    return grid.n_free * grid.resolution ** 2


def is_free(grid: OccupancyGrid, point) -> bool:
    x, y = point
    col, row = grid.world_to_cell(x, y)
    if not grid.in_bounds(col, row):
        return False
    return bool(grid.state[row, col] == FREE)


def are_free(grid: OccupancyGrid, xs, ys) -> np.ndarray:
    """Vectorised :func:`is_free`."""
    col, row = grid.world_to_cell(xs, ys)
    ok = grid.in_bounds(col, row)
    out = np.zeros(np.shape(col), dtype=bool)
    out[ok] = grid.state[row[ok], col[ok]] == FREE
    return out


def free_cells(grid: OccupancyGrid) -> Tuple[np.ndarray, np.ndarray]:
    """``(cols, rows)`` of all free cells in row-major order."""
    rows, cols = np.nonzero(grid.state == FREE)
    return cols, rows


def sample_free_points(grid: OccupancyGrid, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform over free space, shape ``(n, 2)``."""
    cols, rows = free_cells(grid)
    if cols.size == 0:
        raise NoFreeSpaceError("map has no free cells")
    pick = rng.integers(0, cols.size, size=n)
    offsets = rng.random((n, 2))
    gx = (cols[pick] + offsets[:, 0]) * grid.resolution
    gy = (rows[pick] + offsets[:, 1]) * grid.resolution
    c, s = math.cos(grid.origin.theta), math.sin(grid.origin.theta)
    xs = grid.origin.x + c * gx - s * gy
    ys = grid.origin.y + s * gx + c * gy
    pts = np.column_stack([xs, ys])
    # a rotated origin can push a point a rounding error across a cell face
    bad = ~are_free(grid, pts[:, 0], pts[:, 1])
    if bad.any():
        cx, cy = grid.cell_to_world(cols[pick[bad]], rows[pick[bad]])
        pts[bad] = np.column_stack([cx, cy])
    return pts


def sample_free_point(grid: OccupancyGrid, rng: np.random.Generator) -> Tuple[float, float]:
    x, y = sample_free_points(grid, 1, rng)[0]
    return float(x), float(y)


def free_components(grid: OccupancyGrid) -> int:
    """Number of 4-connected free-space components."""
    _, n = ndimage.label(grid.state == FREE)
    return int(n)
