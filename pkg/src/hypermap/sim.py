"""Deterministic 2D simulation of boundary-constrained semantic exploration.

The world is a known occupancy grid plus labeled ground-truth polygons. A
sector sensor ray-casts against the grid to produce the visibility footprint
and samples object interiors for detections. The robot moves cell to cell,
confined to Free cells inside a boundary polygon, towards the nearest
frontier of the exploration layer. Sensing is not confined: objects beyond
the boundary are mapped when they are in view.

All randomness comes from one ``numpy.random.PCG64`` stream seeded from the
world, consumed per frame in a fixed order: for each object in list order a
detection draw followed (if detected) by the point noise, then one
false-positive draw and its shape.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import ndimage

from .core import Hypermap, LayerKind
from .errors import FormatError, GeometryMismatch, HypermapError, NoProgress, OutOfBounds
from .geometry import Polygon, points_in_polygon
from .grid import (
    ExplorationGrid,
    GridGeometry,
    GridIndex,
    OccupancyGrid,
    coverage,
    grid_to_world,
    load_grid,
    polygon_mask,
    world_to_grid,
)
from .mapper import DEFAULT_MIN_POINTS, Detection, DetectionFrame, FrameReport, Pose2D, process_frame
from .semantic import MergeParams, SemanticLayer

SQRT2 = math.sqrt(2.0)

# (dr, dc) in N, NE, E, SE, S, SW, W, NW order; north is +row (+y).
NEIGHBORS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

# Consecutive in-place scan headings overlap by a quarter of the field of view.
SCAN_OVERLAP = 0.75


class InvalidWorld(HypermapError, ValueError):
    pass


@dataclass(frozen=True)
class SensorParams:
    fov: float = 1.57
    range: float = 4.0
    rays: int = 180
    points_per_object: int = 60
    sense_interval: int = 3

    def __post_init__(self):
        if not 0.0 < self.fov <= 2.0 * math.pi:
            raise ValueError(f"fov must be in (0, 2*pi], got {self.fov}")
        if not self.range > 0:
            raise ValueError(f"range must be positive, got {self.range}")
        if self.rays < 8:
            raise ValueError(f"need at least 8 rays, got {self.rays}")
        if self.points_per_object < 1:
            raise ValueError("points_per_object must be positive")
        if self.sense_interval < 1:
            raise ValueError("sense_interval must be positive")


@dataclass(frozen=True)
class NoiseParams:
    point_sigma: float = 0.02
    detect_prob: float = 0.9
    false_positive_rate: float = 0.0

    def __post_init__(self):
        if not self.point_sigma >= 0:
            raise ValueError(f"point_sigma must be >= 0, got {self.point_sigma}")
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ValueError(f"detect_prob must be in [0, 1], got {self.detect_prob}")
        if not 0.0 <= self.false_positive_rate <= 1.0:
            raise ValueError(f"false_positive_rate must be in [0, 1], got {self.false_positive_rate}")


def halton(index: int, base: int) -> float:
    f, r = 1.0, 0.0
    while index > 0:
        f /= base
        r += f * (index % base)
        index //= base
    return r


def interior_samples(shape: Polygon, n: int, max_tries: int = 100_000) -> list[tuple[float, float]]:
    """First ``n`` points of a Halton(2, 3) sequence over the bbox that fall inside ``shape``."""
    x0, y0, x1, y1 = shape.bbox()
    out: list[tuple[float, float]] = []
    start = 1
    batch = max(4 * n, 64)
    while len(out) < n and start <= max_tries:
        ks = range(start, min(start + batch, max_tries + 1))
        hx = np.array([halton(k, 2) for k in ks])
        hy = np.array([halton(k, 3) for k in ks])
        xs, ys = x0 + hx * (x1 - x0), y0 + hy * (y1 - y0)
        inside = points_in_polygon(xs, ys, shape)
        out.extend(zip(xs[inside].tolist(), ys[inside].tolist()))
        start += batch
    return out[:n]


@dataclass
class SimWorld:
    occupancy: OccupancyGrid
    objects: list[tuple[str, Polygon]]
    start: Pose2D
    boundary: Polygon
    sensor: SensorParams = field(default_factory=SensorParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    seed: int = 0

    def __post_init__(self):
        geom = self.occupancy.geometry
        try:
            idx = world_to_grid(geom, self.start.position)
        except OutOfBounds:
            raise InvalidWorld(f"start {self.start.position} lies outside the grid") from None
        if not self.occupancy.free_mask()[idx]:
            raise InvalidWorld(f"start cell {idx} is not Free")
        if not self.boundary.contains(self.start.position):
            raise InvalidWorld(f"start {self.start.position} lies outside the boundary polygon")
        gx0, gy0, gx1, gy1 = geom.bounds()
        for label, shape in self.objects:
            x0, y0, x1, y1 = shape.bbox()
            if x0 < gx0 or y0 < gy0 or x1 > gx1 or y1 > gy1:
                raise InvalidWorld(f"object {label!r} extends beyond the grid")
        self._blocked = ~self.occupancy.free_mask()
        self._samples = [interior_samples(shape, self.sensor.points_per_object) for _, shape in self.objects]
        self._own_cells = [polygon_mask(geom, shape) for _, shape in self.objects]

    @property
    def blocked(self) -> np.ndarray:
        """Cells that stop rays and motion (Occupied or Unknown)."""
        return self._blocked

    def labels(self) -> list[str]:
        return sorted({label for label, _ in self.objects})


# --- ray casting -------------------------------------------------------------


def cast_ray(blocked: np.ndarray, geom: GridGeometry, x: float, y: float, angle: float, max_range: float) -> float:
    """Distance travelled before entering a blocked (or off-grid) cell, capped at ``max_range``.

    The starting cell never blocks. A ray passing exactly through a cell
    corner stops if either of the two side cells is blocked.
    """
    res = geom.resolution
    gx = (x - geom.origin[0]) / res
    gy = (y - geom.origin[1]) / res
    c, r = math.floor(gx), math.floor(gy)
    dx, dy = math.cos(angle), math.sin(angle)
    step_c = 1 if dx > 0 else -1
    step_r = 1 if dy > 0 else -1
    # Ray parameter (meters) to the next vertical/horizontal cell boundary.
    if abs(dx) > 1e-15:
        t_max_c = ((c + (step_c > 0)) - gx) * res / dx
        t_delta_c = res / abs(dx)
    else:
        t_max_c = t_delta_c = math.inf
    if abs(dy) > 1e-15:
        t_max_r = ((r + (step_r > 0)) - gy) * res / dy
        t_delta_r = res / abs(dy)
    else:
        t_max_r = t_delta_r = math.inf
    rows, cols = blocked.shape

    def hit(rr, cc):
        return not (0 <= rr < rows and 0 <= cc < cols) or blocked[rr, cc]

    while True:
        if t_max_c < t_max_r:
            t = t_max_c
            if t >= max_range:
                return max_range
            c += step_c
            t_max_c += t_delta_c
        elif t_max_r < t_max_c:
            t = t_max_r
            if t >= max_range:
                return max_range
            r += step_r
            t_max_r += t_delta_r
        else:
            t = t_max_c
            if t >= max_range:
                return max_range
            if hit(r, c + step_c) or hit(r + step_r, c):
                return t
            c += step_c
            r += step_r
            t_max_c += t_delta_c
            t_max_r += t_delta_r
        if hit(r, c):
            return t


def ray_angles(sensor: SensorParams) -> np.ndarray:
    """Ray offsets relative to the heading, evenly spread across the field of view."""
    return -sensor.fov / 2.0 + sensor.fov * (np.arange(sensor.rays) + 0.5) / sensor.rays


def sense(
    world: SimWorld,
    pose: Pose2D,
    rng: np.random.Generator,
    seq: int = 0,
    min_points: int = DEFAULT_MIN_POINTS,
) -> DetectionFrame:
    geom = world.occupancy.geometry
    world_to_grid(geom, pose.position)
    sensor, noise = world.sensor, world.noise

    footprint = []
    for offset in ray_angles(sensor):
        offset = float(offset)
        t = cast_ray(world.blocked, geom, pose.x, pose.y, pose.theta + offset, sensor.range)
        footprint.append((t * math.cos(offset), t * math.sin(offset), 0.0))

    detections = []
    half_fov = sensor.fov / 2.0
    for k, (label, _) in enumerate(world.objects):
        blocked = world.blocked & ~world._own_cells[k]
        visible = []
        for qx, qy in world._samples[k]:
            sx, sy = pose.inverse_transform(qx, qy)
            dist = math.hypot(sx, sy)
            if dist > sensor.range or abs(math.atan2(sy, sx)) > half_fov:
                continue
            if dist > 0 and cast_ray(blocked, geom, pose.x, pose.y, math.atan2(qy - pose.y, qx - pose.x), dist) < dist:
                continue
            visible.append((sx, sy))
        detected = rng.random() < noise.detect_prob
        if len(visible) >= min_points and detected:
            jitter = rng.normal(0.0, noise.point_sigma, size=(len(visible), 2)) if noise.point_sigma > 0 else np.zeros((len(visible), 2))
            pts = [(sx + float(j[0]), sy + float(j[1]), 0.0) for (sx, sy), j in zip(visible, jitter)]
            detections.append(Detection(label, pts))

    if rng.random() < noise.false_positive_rate:
        detections.append(_false_positive(world, rng))

    return DetectionFrame(seq, pose, footprint, detections)


def _false_positive(world: SimWorld, rng: np.random.Generator) -> Detection:
    sensor = world.sensor
    labels = world.labels() or ["object"]
    label = labels[int(rng.integers(len(labels)))]
    near = min(0.5, sensor.range / 2.0)
    dist = rng.uniform(near, sensor.range)
    ang = rng.uniform(-sensor.fov / 2.0, sensor.fov / 2.0)
    cx, cy = dist * math.cos(ang), dist * math.sin(ang)
    tri = np.array([cx, cy]) + rng.uniform(-0.2, 0.2, size=(3, 2))
    u = rng.random((sensor.points_per_object, 2))
    flip = u.sum(axis=1) > 1.0
    u[flip] = 1.0 - u[flip]
    pts = tri[0] + u[:, :1] * (tri[1] - tri[0]) + u[:, 1:] * (tri[2] - tri[0])
    return Detection(label, [(float(x), float(y), 0.0) for x, y in pts])


# --- frontiers and planning --------------------------------------------------


def traversable_mask(occ: OccupancyGrid, boundary: Polygon) -> np.ndarray:
    return occ.free_mask() & polygon_mask(occ.geometry, boundary)


def find_frontiers(occ: OccupancyGrid, expl: ExplorationGrid, boundary: Polygon) -> list[list[GridIndex]]:
    """Explored traversable cells 8-adjacent to unexplored traversable cells, in 8-connected clusters.

    Each cluster is sorted by ``(row, col)``; clusters are sorted by their first cell.
    """
    if occ.geometry != expl.geometry:
        raise GeometryMismatch("occupancy and exploration grids differ in geometry")
    trav = traversable_mask(occ, boundary)
    explored = expl.cells == 1
    target = trav & ~explored
    near_target = ndimage.binary_dilation(target, structure=np.ones((3, 3), dtype=bool))
    frontier = trav & explored & near_target
    labels, n = ndimage.label(frontier, structure=np.ones((3, 3), dtype=int))
    clusters = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        clusters.append([(int(r), int(c)) for r, c in zip(rows, cols)])
    clusters.sort(key=lambda cl: cl[0])
    return clusters


def _moves(trav: np.ndarray, cell: GridIndex):
    rows, cols = trav.shape
    r, c = cell
    for dr, dc in NEIGHBORS:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < rows and 0 <= nc < cols) or not trav[nr, nc]:
            continue
        if dr and dc:
            if not (trav[r + dr, c] and trav[r, c + dc]):
                continue
            yield (nr, nc), (0, 1)
        else:
            yield (nr, nc), (1, 0)


def shortest_paths(trav: np.ndarray, start: GridIndex, goal: GridIndex | None = None):
    """Dijkstra over traversable cells.

    Costs are kept as (straight, diagonal) move counts so equal-length
    paths compare exactly. Returns ``(cost, parent)`` dicts.
    """
    counts = {start: (0, 0)}
    cost = {start: 0.0}
    parent: dict[GridIndex, GridIndex | None] = {start: None}
    heap = [(0.0, 0, start)]
    tick = 1
    done = set()
    while heap:
        d, _, cell = heapq.heappop(heap)
        if cell in done:
            continue
        done.add(cell)
        if cell == goal:
            break
        a, b = counts[cell]
        for nxt, (da, db) in _moves(trav, cell):
            if nxt in done:
                continue
            na, nb = a + da, b + db
            nd = na + nb * SQRT2
            if nxt not in cost or nd < cost[nxt]:
                counts[nxt] = (na, nb)
                cost[nxt] = nd
                parent[nxt] = cell
                heapq.heappush(heap, (nd, tick, nxt))
                tick += 1
    return {c: cost[c] for c in done}, parent


def _reconstruct(parent, goal: GridIndex) -> list[GridIndex]:
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def plan_path(occ: OccupancyGrid, boundary: Polygon, start: GridIndex, goal: GridIndex) -> list[GridIndex] | None:
    """Shortest 8-connected path over Free in-boundary cells; ``None`` if unreachable.

    Diagonal moves cost sqrt(2) and need both orthogonal side cells traversable.
    """
    trav = traversable_mask(occ, boundary)
    for name, cell in (("start", start), ("goal", goal)):
        if not occ.geometry.in_bounds(cell) or not trav[cell]:
            raise ValueError(f"{name} cell {cell} is not a Free cell inside the boundary")
    dist, parent = shortest_paths(trav, tuple(start), tuple(goal))
    if tuple(goal) not in dist:
        return None
    return _reconstruct(parent, tuple(goal))


def path_cost(path: list[GridIndex]) -> float:
    straight = diag = 0
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        if r0 != r1 and c0 != c1:
            diag += 1
        else:
            straight += 1
    return straight + diag * SQRT2


# --- exploration loop --------------------------------------------------------


@dataclass
class ExplorationRunResult:
    steps: int
    frames: int
    coverage: float
    reachable_coverage: float
    trajectory: list[Pose2D]
    reports: list[FrameReport] = field(repr=False, default_factory=list)

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "frames": self.frames,
            "coverage": self.coverage,
            "reachable_coverage": self.reachable_coverage,
            "trajectory": [[p.x, p.y, p.theta] for p in self.trajectory],
        }


def new_world_hypermap(world: SimWorld, params: MergeParams | None = None) -> Hypermap:
    h = Hypermap()
    h.add_layer("occupancy", world.occupancy.copy())
    h.add_layer("exploration", ExplorationGrid(world.occupancy.geometry))
    h.add_layer("semantic", SemanticLayer(params))
    return h


def _scan_headings(theta: float, fov: float) -> list[float]:
    if fov >= 2.0 * math.pi:
        return [theta]
    k = math.ceil(2.0 * math.pi / (SCAN_OVERLAP * fov))
    return [theta + i * 2.0 * math.pi / k for i in range(k)]


def _representative(cells: list[GridIndex], dist: dict) -> GridIndex | None:
    reachable = [c for c in cells if c in dist]
    if not reachable:
        return None
    mr = sum(c[0] for c in cells) / len(cells)
    mc = sum(c[1] for c in cells) / len(cells)
    return min(reachable, key=lambda c: (c[0] - mr) ** 2 + (c[1] - mc) ** 2)


def explore(
    world: SimWorld,
    h: Hypermap,
    params: MergeParams | None = None,
    min_points: int = DEFAULT_MIN_POINTS,
    seed: int | None = None,
) -> ExplorationRunResult:
    """Run frontier exploration until no reachable frontier remains.

    The robot senses every ``sense_interval`` steps while walking and does a
    full in-place scan at each goal (and at the start); a frontier cell that
    has been scanned from is not chosen again.
    """
    occ = h.layers_of_kind(LayerKind.OCCUPANCY)[0].payload if h.layers_of_kind(LayerKind.OCCUPANCY) else world.occupancy
    expl = h.layers_of_kind(LayerKind.EXPLORATION)[0].payload
    geom = occ.geometry
    rng = np.random.Generator(np.random.PCG64(world.seed if seed is None else seed))
    trav = traversable_mask(occ, world.boundary)

    pose = world.start
    cell = world_to_grid(geom, pose.position)
    trajectory = [pose]
    reports: list[FrameReport] = []
    steps = 0
    exhausted: set[GridIndex] = set()
    seen_states = set()

    def do_sense(p: Pose2D) -> None:
        frame = sense(world, p, rng, seq=len(reports), min_points=min_points)
        reports.append(process_frame(h, frame, params, min_points))

    def scan() -> None:
        nonlocal pose, steps
        for i, heading in enumerate(_scan_headings(pose.theta, world.sensor.fov)):
            if i:
                pose = Pose2D(pose.x, pose.y, heading)
                steps += 1
                trajectory.append(pose)
            do_sense(pose)
        exhausted.add(cell)

    scan()
    while True:
        candidates = []
        for cluster in find_frontiers(occ, expl, world.boundary):
            remaining = [c for c in cluster if c not in exhausted]
            if remaining:
                candidates.append(remaining)
        dist, parent = shortest_paths(trav, cell)
        best = None
        for cluster in candidates:
            rep = _representative(cluster, dist)
            if rep is not None and (best is None or dist[rep] < dist[best]):
                best = rep
        if best is None:
            break
        state = (frozenset(c for cl in candidates for c in cl), cell, pose.theta)
        if state in seen_states:
            raise NoProgress(f"exploration stalled at {pose}", pose=pose)
        seen_states.add(state)

        path = _reconstruct(parent, best)
        arrived = len(path) == 1
        for nxt in path[1:]:
            x, y = grid_to_world(geom, nxt)
            heading = math.atan2(nxt[0] - cell[0], nxt[1] - cell[1])
            pose = Pose2D(x, y, heading)
            cell = nxt
            steps += 1
            trajectory.append(pose)
            if nxt == best:
                arrived = True
                break
            if steps % world.sensor.sense_interval == 0:
                do_sense(pose)
                break
        if arrived:
            scan()

    cov = coverage(expl, occ, world.boundary)
    dist, _ = shortest_paths(trav, world_to_grid(geom, world.start.position))
    reach = np.zeros(geom.shape, dtype=bool)
    for c in dist:
        reach[c] = True
    total = int(reach.sum())
    reach_cov = int((reach & (expl.cells == 1)).sum()) / total if total else 1.0
    return ExplorationRunResult(steps, len(reports), cov, reach_cov, trajectory, reports)


# --- world files ---------------------------------------------------------------


def _polygon(raw, what: str) -> Polygon:
    try:
        return Polygon(raw)
    except (TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"bad {what} polygon: {exc}") from None


def load_world(path) -> SimWorld:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: world file must be a mapping")
    base = path.parent
    try:
        occ_doc = doc["occupancy"]
        occupancy = load_grid(base / occ_doc["pgm"], base / occ_doc["yaml"])
        objects = [(str(o["label"]), _polygon(o["polygon"], f"object {o.get('label')!r}")) for o in doc.get("objects", [])]
        s = doc["start"]
        start = Pose2D(float(s["x"]), float(s["y"]), float(s.get("theta", 0.0)))
        if "boundary" in doc:
            boundary = _polygon(doc["boundary"], "boundary")
        else:
            x0, y0, x1, y1 = occupancy.geometry.bounds()
            boundary = Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])
        sensor = SensorParams(**(doc.get("sensor") or {}))
        noise = NoiseParams(**(doc.get("noise") or {}))
        seed = int(doc.get("seed", 0))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing or malformed field {exc}") from None
    except InvalidWorld:
        raise
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from None
    return SimWorld(occupancy, objects, start, boundary, sensor, noise, seed)
