"""Axis-aligned raster layers: occupancy and exploration grids.

Row 0 is the bottom row of the map, so ``y`` grows with the row index and
``x`` grows with the column index. A cell belongs to a polygon when its
center lies inside it (boundary included).
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import BadThresholds, FormatError, GeometryMismatch, OutOfBounds
from .geometry import Point, Polygon, points_in_polygon

GridIndex = tuple[int, int]

DEFAULT_OCCUPIED_THRESH = 0.65
DEFAULT_FREE_THRESH = 0.196
UNKNOWN_PIXEL = 205


class OccupancyClass(enum.Enum):
    FREE = "free"
    OCCUPIED = "occupied"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class GridGeometry:
    resolution: float
    origin: Point
    rows: int
    cols: int

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must have at least one cell, got {self.rows}x{self.cols}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def in_bounds(self, idx: GridIndex) -> bool:
        return 0 <= idx[0] < self.rows and 0 <= idx[1] < self.cols

    def bounds(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return ox, oy, ox + self.cols * self.resolution, oy + self.rows * self.resolution

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """``(xs, ys)`` arrays of shape ``(rows, cols)``."""
        ox, oy = self.origin
        xs = ox + (np.arange(self.cols) + 0.5) * self.resolution
        ys = oy + (np.arange(self.rows) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)


def world_to_grid(g: GridGeometry, pt) -> GridIndex:
    r = math.floor((pt[1] - g.origin[1]) / g.resolution)
    c = math.floor((pt[0] - g.origin[0]) / g.resolution)
    if not g.in_bounds((r, c)):
        raise OutOfBounds(f"point ({pt[0]}, {pt[1]}) maps to cell ({r}, {c}) outside {g.rows}x{g.cols} grid")
    return (r, c)


def grid_to_world(g: GridGeometry, idx: GridIndex) -> Point:
    if not g.in_bounds(idx):
        raise OutOfBounds(f"cell {tuple(idx)} outside {g.rows}x{g.cols} grid")
    r, c = idx
    return (g.origin[0] + (c + 0.5) * g.resolution, g.origin[1] + (r + 0.5) * g.resolution)


def polygon_mask(g: GridGeometry, p: Polygon) -> np.ndarray:
    """Boolean ``(rows, cols)`` mask of cells whose centers lie in ``p``."""
    mask = np.zeros(g.shape, dtype=bool)
    x0, y0, x1, y1 = p.bbox()
    ox, oy = g.origin
    res = g.resolution
    # Candidate window: cells whose centers can fall within the bbox.
    c0 = max(0, math.floor((x0 - ox) / res - 0.5))
    c1 = min(g.cols - 1, math.ceil((x1 - ox) / res - 0.5))
    r0 = max(0, math.floor((y0 - oy) / res - 0.5))
    r1 = min(g.rows - 1, math.ceil((y1 - oy) / res - 0.5))
    if c0 > c1 or r0 > r1:
        return mask
    xs = ox + (np.arange(c0, c1 + 1) + 0.5) * res
    ys = oy + (np.arange(r0, r1 + 1) + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    mask[r0 : r1 + 1, c0 : c1 + 1] = points_in_polygon(gx, gy, p)
    return mask


def rasterize_polygon(g: GridGeometry, p: Polygon) -> list[GridIndex]:
    """In-bounds cells whose centers lie inside ``p``, in row-major order."""
    rows, cols = np.nonzero(polygon_mask(g, p))
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def _check_thresholds(occupied_thresh: float, free_thresh: float) -> None:
    if not (0.0 <= free_thresh < occupied_thresh <= 1.0):
        raise BadThresholds(
            f"need 0 <= free_thresh < occupied_thresh <= 1, got free={free_thresh}, occupied={occupied_thresh}"
        )


class OccupancyGrid:
    """Occupancy probabilities in ``[0, 1]``; ``NaN`` marks an Unknown cell."""

    def __init__(
        self,
        geometry: GridGeometry,
        prob: np.ndarray | None = None,
        occupied_thresh: float = DEFAULT_OCCUPIED_THRESH,
        free_thresh: float = DEFAULT_FREE_THRESH,
    ):
        _check_thresholds(occupied_thresh, free_thresh)
        if prob is None:
            prob = np.full(geometry.shape, np.nan)
        prob = np.array(prob, dtype=float)
        if prob.shape != geometry.shape:
            raise GeometryMismatch(f"cell array shape {prob.shape} does not match grid {geometry.shape}")
        known = prob[~np.isnan(prob)]
        if known.size and (known.min() < 0.0 or known.max() > 1.0):
            raise ValueError("occupancy probabilities must lie in [0, 1]")
        self.geometry = geometry
        self.prob = prob
        self.occupied_thresh = float(occupied_thresh)
        self.free_thresh = float(free_thresh)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.geometry, self.prob.copy(), self.occupied_thresh, self.free_thresh)

    def probability(self, idx: GridIndex) -> float | None:
        if not self.geometry.in_bounds(idx):
            raise OutOfBounds(f"cell {tuple(idx)} outside grid")
        p = self.prob[idx[0], idx[1]]
        return None if math.isnan(p) else float(p)

    def class_codes(self, occupied_thresh: float | None = None, free_thresh: float | None = None) -> np.ndarray:
        """Per-cell classification as an object array of :class:`OccupancyClass`."""
        occ = self.occupied_thresh if occupied_thresh is None else occupied_thresh
        free = self.free_thresh if free_thresh is None else free_thresh
        _check_thresholds(occ, free)
        out = np.full(self.geometry.shape, OccupancyClass.UNKNOWN, dtype=object)
        with np.errstate(invalid="ignore"):
            out[self.prob >= occ] = OccupancyClass.OCCUPIED
            out[self.prob <= free] = OccupancyClass.FREE
        return out

    def free_mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.prob <= self.free_thresh

    def occupied_mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.prob >= self.occupied_thresh

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.occupied_thresh == other.occupied_thresh
            and self.free_thresh == other.free_thresh
            and np.array_equal(self.prob, other.prob, equal_nan=True)
        )

    def __repr__(self):
        g = self.geometry
        return f"OccupancyGrid({g.rows}x{g.cols} @ {g.resolution} m)"


def classify(
    occ: OccupancyGrid,
    idx: GridIndex,
    occupied_thresh: float | None = None,
    free_thresh: float | None = None,
) -> OccupancyClass:
    """Three-way classification of one cell; thresholds default to the grid's own."""
    occupied_thresh = occ.occupied_thresh if occupied_thresh is None else occupied_thresh
    free_thresh = occ.free_thresh if free_thresh is None else free_thresh
    _check_thresholds(occupied_thresh, free_thresh)
    p = occ.probability(idx)
    if p is None:
        return OccupancyClass.UNKNOWN
    if p >= occupied_thresh:
        return OccupancyClass.OCCUPIED
    if p <= free_thresh:
        return OccupancyClass.FREE
    return OccupancyClass.UNKNOWN


class ExplorationGrid:
    def __init__(self, geometry: GridGeometry, cells: np.ndarray | None = None):
        if cells is None:
            cells = np.zeros(geometry.shape, dtype=np.uint8)
        cells = np.asarray(cells)
        if cells.shape != geometry.shape:
            raise GeometryMismatch(f"cell array shape {cells.shape} does not match grid {geometry.shape}")
        if not np.isin(cells, (0, 1)).all():
            raise ValueError("exploration cells must be 0 or 1")
        self.geometry = geometry
        self.cells = cells.astype(np.uint8)

    def copy(self) -> "ExplorationGrid":
        return ExplorationGrid(self.geometry, self.cells.copy())

    def is_explored(self, idx: GridIndex) -> bool:
        if not self.geometry.in_bounds(idx):
            raise OutOfBounds(f"cell {tuple(idx)} outside grid")
        return bool(self.cells[idx[0], idx[1]])

    def explored_count(self) -> int:
        return int(self.cells.sum())

    def __eq__(self, other):
        if not isinstance(other, ExplorationGrid):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.cells, other.cells)

    def __repr__(self):
        g = self.geometry
        return f"ExplorationGrid({g.rows}x{g.cols}, {self.explored_count()} explored)"


def mark_explored(e: ExplorationGrid, p: Polygon) -> int:
    """Set every cell covered by ``p`` to explored; returns the number of 0->1 flips."""
    mask = polygon_mask(e.geometry, p)
    fresh = mask & (e.cells == 0)
    e.cells[fresh] = 1
    return int(fresh.sum())


def coverage(e: ExplorationGrid, occ: OccupancyGrid, boundary: Polygon) -> float:
    """Fraction of Free in-boundary cells that are explored (1.0 when there are none)."""
    if e.geometry != occ.geometry:
        raise GeometryMismatch("exploration and occupancy grids differ in geometry")
    region = occ.free_mask() & polygon_mask(occ.geometry, boundary)
    total = int(region.sum())
    if total == 0:
        return 1.0
    return int((region & (e.cells == 1)).sum()) / total


# --- PGM / YAML persistence ---------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_pgm(data: bytes) -> np.ndarray:
    """Decode a binary 8-bit P5 image; returns rows top-to-bottom as ``uint8``."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise FormatError(f"bad PGM magic {tokens[0][:8]!r}, expected P5")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("non-integer PGM header field") from None
    if width < 1 or height < 1:
        raise FormatError(f"bad PGM size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"PGM maxval {maxval}; only 8-bit images (maxval 255) are supported")
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError("missing whitespace after PGM header")
    pos += 1
    pixels = data[pos:]
    if len(pixels) != width * height:
        raise FormatError(f"PGM pixel data has {len(pixels)} bytes, expected {width * height}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()


def _geometry_from_meta(meta: dict, rows: int, cols: int) -> GridGeometry:
    try:
        resolution = float(meta["resolution"])
        origin = meta["origin"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"map YAML missing or bad field: {exc}") from None
    if not isinstance(origin, (list, tuple)) or len(origin) not in (2, 3):
        raise FormatError(f"map YAML origin must be [x, y, yaw], got {origin!r}")
    if len(origin) == 3 and float(origin[2]) != 0.0:
        raise FormatError(f"rotated map origins are not supported (yaw={origin[2]})")
    try:
        return GridGeometry(resolution, (float(origin[0]), float(origin[1])), rows, cols)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def occupancy_from_pgm(pixels: np.ndarray, meta: dict) -> OccupancyGrid:
    """Map image pixels (top row first) and sidecar metadata to an occupancy grid."""
    negate = int(meta.get("negate", 0))
    if negate not in (0, 1):
        raise FormatError(f"negate must be 0 or 1, got {negate}")
    rows, cols = pixels.shape
    geom = _geometry_from_meta(meta, rows, cols)
    v = np.flipud(pixels).astype(float)
    prob = v / 255.0 if negate else (255.0 - v) / 255.0
    prob[np.flipud(pixels) == UNKNOWN_PIXEL] = np.nan
    try:
        return OccupancyGrid(
            geom,
            prob,
            occupied_thresh=float(meta.get("occupied_thresh", DEFAULT_OCCUPIED_THRESH)),
            free_thresh=float(meta.get("free_thresh", DEFAULT_FREE_THRESH)),
        )
    except BadThresholds as exc:
        raise FormatError(str(exc)) from None


def occupancy_to_pgm(grid: OccupancyGrid) -> np.ndarray:
    """Encode with ``negate = 0``; Known cells never use the Unknown pixel value."""
    prob = grid.prob
    unknown = np.isnan(prob)
    v = np.rint(255.0 - np.where(unknown, 0.0, prob) * 255.0).astype(np.int64)
    # A known probability that rounds onto the Unknown code is nudged one step more occupied.
    v[(v == UNKNOWN_PIXEL) & ~unknown] = UNKNOWN_PIXEL - 1
    v[unknown] = UNKNOWN_PIXEL
    return np.flipud(v.astype(np.uint8))


def _meta(geometry: GridGeometry, image: str) -> dict:
    return {
        "image": image,
        "resolution": geometry.resolution,
        "origin": [geometry.origin[0], geometry.origin[1], 0.0],
        "negate": 0,
    }


def occupancy_meta(grid: OccupancyGrid, image: str) -> dict:
    meta = _meta(grid.geometry, image)
    meta["occupied_thresh"] = grid.occupied_thresh
    meta["free_thresh"] = grid.free_thresh
    return meta


def exploration_from_pgm(pixels: np.ndarray, meta: dict) -> ExplorationGrid:
    if not np.isin(pixels, (0, 255)).all():
        raise FormatError("exploration image may only contain pixel values 0 and 255")
    rows, cols = pixels.shape
    geom = _geometry_from_meta(meta, rows, cols)
    return ExplorationGrid(geom, (np.flipud(pixels) == 255).astype(np.uint8))


def exploration_to_pgm(grid: ExplorationGrid) -> np.ndarray:
    return np.flipud(grid.cells * np.uint8(255))


def exploration_meta(grid: ExplorationGrid, image: str) -> dict:
    return _meta(grid.geometry, image)


def dump_yaml(meta: dict) -> str:
    return yaml.safe_dump(meta, sort_keys=True, default_flow_style=None)


def parse_yaml(text: str | bytes) -> dict:
    try:
        meta = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise FormatError(f"invalid YAML: {exc}") from None
    if not isinstance(meta, dict):
        raise FormatError("map YAML must be a mapping")
    return meta


def load_grid(pgm_path, yaml_path) -> OccupancyGrid:
    meta = parse_yaml(Path(yaml_path).read_text())
    return occupancy_from_pgm(parse_pgm(Path(pgm_path).read_bytes()), meta)


def load_map_yaml(yaml_path) -> OccupancyGrid:
    """Load an occupancy grid through its sidecar, resolving ``image`` relative to it."""
    yaml_path = Path(yaml_path)
    meta = parse_yaml(yaml_path.read_text())
    if "image" not in meta:
        raise FormatError(f"{yaml_path}: missing 'image' field")
    pgm_path = yaml_path.parent / str(meta["image"])
    return occupancy_from_pgm(parse_pgm(pgm_path.read_bytes()), meta)


def save_grid(grid: OccupancyGrid, pgm_path, yaml_path) -> None:
    pgm_path, yaml_path = Path(pgm_path), Path(yaml_path)
    pgm_path.write_bytes(encode_pgm(occupancy_to_pgm(grid)))
    yaml_path.write_text(dump_yaml(occupancy_meta(grid, _relative_image(pgm_path, yaml_path))))


def load_exploration(pgm_path, yaml_path) -> ExplorationGrid:
    meta = parse_yaml(Path(yaml_path).read_text())
    return exploration_from_pgm(parse_pgm(Path(pgm_path).read_bytes()), meta)


def save_exploration(grid: ExplorationGrid, pgm_path, yaml_path) -> None:
    pgm_path, yaml_path = Path(pgm_path), Path(yaml_path)
    pgm_path.write_bytes(encode_pgm(exploration_to_pgm(grid)))
    yaml_path.write_text(dump_yaml(exploration_meta(grid, _relative_image(pgm_path, yaml_path))))


def _relative_image(pgm_path: Path, yaml_path: Path) -> str:
    try:
        return str(pgm_path.resolve().relative_to(yaml_path.resolve().parent))
    except ValueError:
        return str(pgm_path.resolve())
