import math

import numpy as np
import pytest

from hypermap.core import dumps_hypermap
from hypermap.errors import FormatError, GeometryMismatch, OutOfBounds
from hypermap.geometry import point_in_polygon
from hypermap.grid import ExplorationGrid, GridGeometry, OccupancyGrid, coverage, save_grid, world_to_grid
from hypermap.mapper import Pose2D, project_points, visibility_area
from hypermap.sim import (
    InvalidWorld,
    NoiseParams,
    SensorParams,
    SimWorld,
    cast_ray,
    explore,
    find_frontiers,
    halton,
    interior_samples,
    load_world,
    new_world_hypermap,
    path_cost,
    plan_path,
    sense,
    shortest_paths,
    traversable_mask,
)

from builders import confinement_world, rect, walled_room
from oracles import clusters_oracle, frontier_oracle, ucs_cost

QUIET = NoiseParams(point_sigma=0.0, detect_prob=1.0)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def corridor_world(objects=()):
    """Open 6 m x 6 m area at 0.1 m with a wall occupying x in [2.5, 2.6)."""
    g = GridGeometry(0.1, (0.0, 0.0), 60, 60)
    prob = np.zeros(g.shape)
    prob[:, 25] = 1.0
    everything = rect(0, 0, 6, 6)
    return SimWorld(OccupancyGrid(g, prob), list(objects), Pose2D(0.5, 3.0, 0.0), everything, noise=QUIET)


# --- sampling / ray casting -------------------------------------------------------------


def test_halton_prefix():
    assert [halton(k, 2) for k in range(1, 5)] == [0.5, 0.25, 0.75, 0.125]
    assert [halton(k, 3) for k in range(1, 4)] == pytest.approx([1 / 3, 2 / 3, 1 / 9])


def test_interior_samples_inside_and_deterministic():
    shape = rect(1.0, 1.0, 1.6, 1.3)
    pts = interior_samples(shape, 60)
    assert len(pts) == 60
    assert all(point_in_polygon(p, shape) for p in pts)
    assert pts == interior_samples(shape, 60)


def test_cast_ray_axis_and_corner():
    blocked = np.zeros((10, 10), dtype=bool)
    blocked[:, 7] = True
    g = GridGeometry(1.0, (0.0, 0.0), 10, 10)
    assert cast_ray(blocked, g, 0.5, 0.5, 0.0, 20.0) == pytest.approx(6.5)
    assert cast_ray(blocked, g, 0.5, 0.5, math.pi, 20.0) == pytest.approx(0.5)  # leaves the grid
    assert cast_ray(blocked, g, 0.5, 0.5, 0.0, 3.0) == 3.0
    # Diagonal through a corner where only one side cell is blocked still stops.
    blocked2 = np.zeros((4, 4), dtype=bool)
    blocked2[0, 1] = True
    assert cast_ray(blocked2, GridGeometry(1.0, (0, 0), 4, 4), 0.5, 0.5, math.pi / 4, 10.0) == pytest.approx(
        math.sqrt(2) / 2
    )


def test_sense_wall_two_meters_ahead():
    world = corridor_world()
    frame = sense(world, world.start, rng())
    assert len(frame.footprint) == world.sensor.rays
    for x, y, _ in frame.footprint:
        assert x == pytest.approx(2.0, abs=1e-9)
    vis = visibility_area(frame)
    xs = [p[0] for p in vis.vertices]
    assert max(xs) - min(xs) == pytest.approx(2.0, abs=1e-9)


def test_object_behind_wall_not_detected():
    world = corridor_world([("chair", rect(3.0, 2.8, 3.5, 3.2))])
    for seed in range(5):
        assert sense(world, world.start, rng(seed)).detections == ()


def test_noise_free_points_inside_shape():
    shape = rect(1.5, 2.6, 2.0, 3.3)
    world = corridor_world([("chair", shape)])
    frame = sense(world, world.start, rng())
    [det] = frame.detections
    assert det.label == "chair"
    assert len(det.points) == world.sensor.points_per_object
    for p in project_points(frame.pose, det.points):
        assert shape.contains((round(p[0], 12), round(p[1], 12)))


def test_sense_outside_grid():
    world = corridor_world()
    with pytest.raises(OutOfBounds):
        sense(world, Pose2D(-1.0, 3.0, 0.0), rng())


def test_sense_is_reproducible():
    world = corridor_world([("chair", rect(1.5, 2.6, 2.0, 3.3))])
    world.noise = NoiseParams(point_sigma=0.05, detect_prob=0.5, false_positive_rate=0.5)
    a = [sense(world, world.start, r) for r in [rng(3)] * 5]
    b = [sense(world, world.start, r) for r in [rng(3)] * 5]
    assert a == b


def test_false_positive_uses_world_labels():
    world = corridor_world([("chair", rect(4.0, 4.0, 4.5, 4.5))])
    world.noise = NoiseParams(point_sigma=0.0, detect_prob=1.0, false_positive_rate=1.0)
    frame = sense(world, world.start, rng())
    [det] = frame.detections
    assert det.label == "chair"
    assert all(math.hypot(x, y) <= world.sensor.range + 0.3 for x, y, _ in det.points)


def test_world_validation():
    occ = walled_room()
    with pytest.raises(InvalidWorld):
        SimWorld(occ, [], Pose2D(0.1, 0.1, 0), rect(0, 0, 5, 5))  # start on a wall
    with pytest.raises(InvalidWorld):
        SimWorld(occ, [], Pose2D(4.0, 4.0, 0), rect(0, 0, 3, 3))  # start outside boundary
    with pytest.raises(InvalidWorld):
        SimWorld(occ, [("x", rect(4.5, 4.5, 5.5, 5.5))], Pose2D(1.1, 1.1, 0), rect(0, 0, 5, 5))
    with pytest.raises(ValueError):
        SensorParams(rays=4)


# --- frontiers -------------------------------------------------------------------------------


def test_frontiers_fully_explored():
    occ = walled_room(10, 1.0)
    expl = ExplorationGrid(occ.geometry, np.ones((10, 10), dtype=np.uint8))
    assert find_frontiers(occ, expl, rect(0, 0, 10, 10)) == []


def test_frontiers_half_explored_room():
    g = GridGeometry(1.0, (0, 0), 10, 10)
    occ = OccupancyGrid(g, np.zeros(g.shape))
    expl = ExplorationGrid(g)
    expl.cells[:, :5] = 1
    assert find_frontiers(occ, expl, rect(0, 0, 10, 10)) == [[(r, 4) for r in range(10)]]


def test_frontiers_pocket_behind_gap():
    g = GridGeometry(1.0, (0, 0), 11, 11)
    prob = np.zeros(g.shape)
    prob[:, 5] = 1.0
    prob[5, 5] = 0.0
    occ = OccupancyGrid(g, prob)
    expl = ExplorationGrid(g)
    expl.cells[:, :5] = 1
    # The gap and the cell just behind it stay unexplored.
    expl.cells[:, 6:] = 1
    expl.cells[5, 6] = 0
    clusters = find_frontiers(occ, expl, rect(0, 0, 11, 11))
    assert clusters == [[(4, 4), (5, 4), (6, 4)], [(4, 6), (4, 7), (5, 7), (6, 6), (6, 7)]]
    expected = frontier_oracle(occ.free_mask(), np.ones((11, 11), bool), expl.cells == 1)
    assert {c for cl in clusters for c in cl} == expected


def random_frontier_case(seed):
    r = np.random.default_rng(seed)
    g = GridGeometry(1.0, (0.0, 0.0), 20, 20)
    prob = np.where(r.uniform(size=g.shape) < 0.2, 1.0, 0.0)
    prob[r.uniform(size=g.shape) < 0.05] = np.nan
    occ = OccupancyGrid(g, prob)
    expl = ExplorationGrid(g, (r.uniform(size=g.shape) < 0.5).astype(np.uint8))
    x0, y0 = r.uniform(0, 8, 2)
    x1, y1 = r.uniform(12, 20, 2)
    boundary = rect(x0, y0, x1, y1)
    return occ, expl, boundary


def check_frontier_case(seed):
    occ, expl, boundary = random_frontier_case(seed)
    inside = np.zeros(occ.geometry.shape, dtype=bool)
    for r in range(20):
        for c in range(20):
            inside[r, c] = point_in_polygon((c + 0.5, r + 0.5), boundary)
    expected = frontier_oracle(occ.free_mask(), inside, expl.cells == 1)
    got = find_frontiers(occ, expl, boundary)
    return got == clusters_oracle(expected)


@pytest.mark.parametrize("seed", range(0, 100, 10))
def test_frontiers_match_brute_force(seed):
    assert check_frontier_case(seed)


def test_frontiers_geometry_mismatch():
    occ = walled_room(10, 1.0)
    with pytest.raises(GeometryMismatch):
        find_frontiers(occ, ExplorationGrid(GridGeometry(1.0, (0, 0), 9, 10)), rect(0, 0, 10, 10))


# --- planning -------------------------------------------------------------------------------


def open_grid(rows, cols, prob=None):
    g = GridGeometry(1.0, (0.0, 0.0), rows, cols)
    return OccupancyGrid(g, np.zeros(g.shape) if prob is None else prob), rect(0, 0, cols, rows)


def test_plan_single_cell_and_corridor():
    occ, boundary = open_grid(1, 5)
    assert plan_path(occ, boundary, (0, 2), (0, 2)) == [(0, 2)]
    path = plan_path(occ, boundary, (0, 0), (0, 4))
    assert path == [(0, c) for c in range(5)]
    assert path_cost(path) == 4


def test_plan_sealed_goal():
    prob = np.zeros((7, 7))
    prob[2:5, 2:5] = 1.0
    prob[3, 3] = 0.0
    occ, boundary = open_grid(7, 7, prob)
    assert plan_path(occ, boundary, (0, 0), (3, 3)) is None


def test_plan_no_corner_cutting():
    prob = np.zeros((3, 3))
    prob[1, 0] = 1.0
    occ, boundary = open_grid(3, 3, prob)
    # Both diagonals around the occupied (1, 0) would clip it, so the path goes straight.
    path = plan_path(occ, boundary, (0, 0), (2, 0))
    assert path == [(0, 0), (0, 1), (1, 1), (2, 1), (2, 0)]
    assert path_cost(path) == 4


def test_plan_requires_traversable_endpoints():
    prob = np.zeros((3, 3))
    prob[1, 1] = 1.0
    occ, boundary = open_grid(3, 3, prob)
    with pytest.raises(ValueError):
        plan_path(occ, boundary, (0, 0), (1, 1))


def test_plan_respects_boundary():
    occ, _ = open_grid(5, 5)
    boundary = rect(0, 0, 5, 1)
    with pytest.raises(ValueError):
        plan_path(occ, boundary, (0, 0), (2, 2))
    assert plan_path(occ, boundary, (0, 0), (0, 4)) == [(0, c) for c in range(5)]


def legal_path(trav, path):
    for (r0, c0), (r1, c1) in zip(path, path[1:]):
        assert max(abs(r1 - r0), abs(c1 - c0)) == 1
        assert trav[r1, c1]
        if r0 != r1 and c0 != c1:
            assert trav[r1, c0] and trav[r0, c1]
    return True


def plan_fixture(seed):
    r = np.random.default_rng(seed)
    rows, cols = (int(v) for v in r.integers(2, 16, 2))
    prob = np.where(r.uniform(size=(rows, cols)) < 0.3, 1.0, 0.0)
    occ, boundary = open_grid(rows, cols, prob)
    free = list(zip(*np.nonzero(prob == 0.0)))
    if len(free) < 2:
        return None
    a, b = r.choice(len(free), 2, replace=False)
    return occ, boundary, tuple(map(int, free[a])), tuple(map(int, free[b]))


def check_plan_case(seed):
    case = plan_fixture(seed)
    if case is None:
        return True
    occ, boundary, s, t = case
    path = plan_path(occ, boundary, s, t)
    expected = ucs_cost(traversable_mask(occ, boundary), s, t)
    if expected is None:
        return path is None
    return path[0] == s and path[-1] == t and legal_path(traversable_mask(occ, boundary), path) and abs(
        path_cost(path) - expected
    ) < 1e-9


@pytest.mark.parametrize("seed", range(15))
def test_plan_optimal_against_ucs(seed):
    assert check_plan_case(seed)


def test_plan_tie_break_is_stable():
    occ, boundary = open_grid(5, 5)
    paths = {tuple(plan_path(occ, boundary, (0, 0), (4, 2))) for _ in range(3)}
    assert len(paths) == 1


def test_shortest_paths_costs():
    trav = np.ones((4, 4), dtype=bool)
    dist, _ = shortest_paths(trav, (0, 0))
    assert dist[(3, 3)] == pytest.approx(3 * math.sqrt(2))
    assert dist[(0, 3)] == 3


# --- exploration -------------------------------------------------------------------------------


def room_world(boundary=None, objects=(), seed=7):
    occ = walled_room()
    return SimWorld(occ, list(objects), Pose2D(1.1, 1.1, 0.0), boundary or rect(0, 0, 5, 5), seed=seed)


def test_explore_empty_room():
    world = room_world()
    h = new_world_hypermap(world)
    result = explore(world, h)
    assert result.coverage == 1.0
    assert result.reachable_coverage == 1.0
    assert result.frames == len(result.reports)
    assert all(world.boundary.contains(p.position) for p in result.trajectory)


def test_explore_half_boundary():
    world = room_world(boundary=rect(0, 0, 2.5, 5))
    h = new_world_hypermap(world)
    result = explore(world, h)
    assert result.coverage == 1.0
    assert all(p.x <= 2.5 for p in result.trajectory)
    expl = h.layer("exploration")
    assert coverage(expl, h.layer("occupancy"), world.boundary) == 1.0


def test_explore_confined_with_outside_object():
    world = confinement_world()
    h = new_world_hypermap(world)
    result = explore(world, h)
    assert result.coverage == 1.0
    assert all(world.boundary.contains(p.position) for p in result.trajectory)
    labels = [o.label for o in h.layer("semantic")]
    assert "chair" in labels
    chair = [o for o in h.layer("semantic") if o.label == "chair"][0]
    assert not world.boundary.contains(chair.display_area.centroid)


def test_explore_deterministic_and_seed_independent_coverage():
    runs = []
    for seed in (7, 7, 8):
        world = confinement_world(seed)
        h = new_world_hypermap(world)
        result = explore(world, h)
        runs.append((result, dumps_hypermap(h)))
    assert runs[0][1] == runs[1][1]
    assert runs[0][0].trajectory == runs[1][0].trajectory
    assert runs[2][0].coverage == 1.0


def test_explore_occupancy_untouched():
    world = room_world()
    h = new_world_hypermap(world)
    explore(world, h)
    assert h.layer("occupancy") == world.occupancy


def test_explore_trajectory_moves_one_cell():
    world = confinement_world()
    result = explore(world, new_world_hypermap(world))
    g = world.occupancy.geometry
    cells = [world_to_grid(g, p.position) for p in result.trajectory]
    for a, b in zip(cells, cells[1:]):
        assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) <= 1


# --- world files ------------------------------------------------------------------------------


def test_load_world(tmp_path):
    occ = walled_room()
    save_grid(occ, tmp_path / "room.pgm", tmp_path / "room.yaml")
    (tmp_path / "world.yaml").write_text(
        "occupancy: {pgm: room.pgm, yaml: room.yaml}\n"
        "start: {x: 1.1, y: 1.1}\n"
        "boundary: [[0, 0], [3, 0], [3, 5], [0, 5]]\n"
        "objects:\n  - {label: chair, polygon: [[3.8, 2.2], [4.3, 2.2], [4.3, 2.7], [3.8, 2.7]]}\n"
        "sensor: {rays: 90}\n"
        "seed: 11\n"
    )
    world = load_world(tmp_path / "world.yaml")
    assert world.seed == 11
    assert world.sensor.rays == 90
    assert world.objects[0][0] == "chair"
    assert world.boundary == rect(0, 0, 3, 5)


def test_load_world_errors(tmp_path):
    (tmp_path / "w.yaml").write_text("start: {x: 1, y: 1}\n")
    with pytest.raises(FormatError):
        load_world(tmp_path / "w.yaml")
    (tmp_path / "w.yaml").write_text("[unclosed\n")
    with pytest.raises(FormatError):
        load_world(tmp_path / "w.yaml")
