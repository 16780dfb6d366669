"""Planar geometry on meter-scale map coordinates.

Points are plain ``(x, y)`` float tuples. Polygons are immutable
:class:`Polygon` values whose vertices are always stored counter-clockwise.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInput, EmptyRaster, InvalidPolygon, NotConvex

Point = tuple[float, float]

# Cross products below this magnitude (m^2) count as collinear.
COLLINEAR_EPS = 1e-12


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _as_point(p) -> Point:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidPolygon(f"non-finite coordinate {p!r}")
    return (x, y)


def _signed_area(vs: Sequence[Point]) -> float:
    s = 0.0
    n = len(vs)
    for i in range(n):
        x0, y0 = vs[i]
        x1, y1 = vs[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > COLLINEAR_EPS and d2 < -COLLINEAR_EPS) or (d1 < -COLLINEAR_EPS and d2 > COLLINEAR_EPS)) and (
        (d3 > COLLINEAR_EPS and d4 < -COLLINEAR_EPS) or (d3 < -COLLINEAR_EPS and d4 > COLLINEAR_EPS)
    ):
        return True
    if abs(d1) <= COLLINEAR_EPS and _on_segment(p1, q1, q2):
        return True
    if abs(d2) <= COLLINEAR_EPS and _on_segment(p2, q1, q2):
        return True
    if abs(d3) <= COLLINEAR_EPS and _on_segment(q1, p1, p2):
        return True
    if abs(d4) <= COLLINEAR_EPS and _on_segment(q2, p1, p2):
        return True
    return False


def _on_segment(p: Point, a: Point, b: Point) -> bool:
    """True if ``p`` lies on segment ``ab`` (within the collinearity tolerance)."""
    if abs(_cross(a, b, p)) > COLLINEAR_EPS:
        return False
    return (
        min(a[0], b[0]) - COLLINEAR_EPS <= p[0] <= max(a[0], b[0]) + COLLINEAR_EPS
        and min(a[1], b[1]) - COLLINEAR_EPS <= p[1] <= max(a[1], b[1]) + COLLINEAR_EPS
    )


class Polygon:
    """A simple polygon with counter-clockwise vertices.

    Clockwise input is reversed silently. Construction rejects fewer than
    three vertices, repeated consecutive vertices, non-finite coordinates,
    zero area and self-intersections.
    """

    __slots__ = ("_vertices", "_area", "_centroid")

    def __init__(self, vertices: Iterable[Sequence[float]], *, check: bool = True):
        vs = [_as_point(v) for v in vertices]
        if check:
            if len(vs) < 3:
                raise InvalidPolygon(f"polygon needs at least 3 vertices, got {len(vs)}")
            for i in range(len(vs)):
                if vs[i] == vs[(i + 1) % len(vs)]:
                    raise InvalidPolygon(f"repeated consecutive vertex {vs[i]}")
        area = _signed_area(vs)
        if area < 0:
            vs.reverse()
            area = -area
        if check:
            if area <= COLLINEAR_EPS:
                raise InvalidPolygon("polygon has zero area")
            if not _is_simple(vs):
                raise InvalidPolygon("polygon is self-intersecting")
        self._vertices = tuple(vs)
        self._area = area
        self._centroid = None

    @classmethod
    def _trusted(cls, vertices: Sequence[Point]) -> "Polygon":
        # Hull and clip outputs are valid by construction.
        return cls(vertices, check=False)

    @property
    def vertices(self) -> tuple[Point, ...]:
        return self._vertices

    @property
    def area(self) -> float:
        return self._area

    @property
    def centroid(self) -> Point:
        if self._centroid is None:
            self._centroid = _centroid(self._vertices, self._area)
        return self._centroid

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self._vertices]
        ys = [v[1] for v in self._vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def is_convex(self) -> bool:
        vs = self._vertices
        n = len(vs)
        return all(_cross(vs[i], vs[(i + 1) % n], vs[(i + 2) % n]) >= -COLLINEAR_EPS for i in range(n))

    def contains(self, pt: Sequence[float]) -> bool:
        return point_in_polygon(pt, self)

    def translate(self, dx: float, dy: float) -> "Polygon":
        return Polygon._trusted([(x + dx, y + dy) for x, y in self._vertices])

    def to_list(self) -> list[list[float]]:
        return [[x, y] for x, y in self._vertices]

    def __len__(self):
        return len(self._vertices)

    def __iter__(self):
        return iter(self._vertices)

    def __eq__(self, other):
        if not isinstance(other, Polygon):
            return NotImplemented
        return self._vertices == other._vertices

    def __hash__(self):
        return hash(self._vertices)

    def __repr__(self):
        return f"Polygon({list(self._vertices)!r})"


def _is_simple(vs: Sequence[Point]) -> bool:
    n = len(vs)
    if n == 3:
        return True
    edges = [(vs[i], vs[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                # Adjacent edges share a vertex; they only conflict if they fold back.
                a0, a1 = edges[i]
                b0, b1 = edges[j]
                shared = a1 if j == i + 1 else a0
                other_a = a0 if j == i + 1 else a1
                other_b = b1 if j == i + 1 else b0
                if abs(_cross(shared, other_a, other_b)) <= COLLINEAR_EPS:
                    da = (other_a[0] - shared[0], other_a[1] - shared[1])
                    db = (other_b[0] - shared[0], other_b[1] - shared[1])
                    if da[0] * db[0] + da[1] * db[1] > 0:
                        return False
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                return False
    return True


def _centroid(vs: Sequence[Point], area: float) -> Point:
    # Shift to the first vertex to keep the moment sums well conditioned.
    ox, oy = vs[0]
    cx = cy = 0.0
    n = len(vs)
    for i in range(n):
        x0, y0 = vs[i][0] - ox, vs[i][1] - oy
        x1, y1 = vs[(i + 1) % n][0] - ox, vs[(i + 1) % n][1] - oy
        w = x0 * y1 - x1 * y0
        cx += (x0 + x1) * w
        cy += (y0 + y1) * w
    return (ox + cx / (6.0 * area), oy + cy / (6.0 * area))


def convex_hull(points: Iterable[Sequence[float]]) -> Polygon:
    """Minimal convex polygon around ``points`` (Andrew's monotone chain).

    Collinear boundary points are dropped. Raises :class:`DegenerateInput`
    for fewer than three distinct points or an all-collinear set.
    """
    pts = sorted({_as_point(p) for p in points})
    if len(pts) < 3:
        raise DegenerateInput(f"need at least 3 distinct points, got {len(pts)}")

    def half(seq):
        chain: list[Point] = []
        for p in seq:
            # Exact sign here; a tolerance could pop a true extreme point whose
            # neighbours are out of sort order by less than the tolerance.
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0.0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(pts)
    upper = half(reversed(pts))
    hull = _drop_flat_vertices(lower[:-1] + upper[:-1])
    if len(hull) < 3 or _signed_area(hull) <= COLLINEAR_EPS:
        raise DegenerateInput("points are collinear")
    return Polygon._trusted(hull)


def _drop_flat_vertices(vs: list[Point]) -> list[Point]:
    """Remove vertices lying (within tolerance) on the segment joining their neighbours."""
    changed = True
    while changed and len(vs) > 3:
        changed = False
        for i in range(len(vs)):
            a, b, c = vs[i - 1], vs[i], vs[(i + 1) % len(vs)]
            if _on_segment(b, a, c):
                del vs[i]
                changed = True
                break
    return vs


def polygon_area(p: Polygon) -> float:
    return p.area


def polygon_centroid(p: Polygon) -> Point:
    """Area centroid (first moment over area), not the vertex mean."""
    return p.centroid


def point_in_polygon(pt: Sequence[float], p: Polygon) -> bool:
    """Ray-crossing containment test; points on the boundary are inside."""
    px, py = float(pt[0]), float(pt[1])
    q = (px, py)
    vs = p.vertices
    n = len(vs)
    inside = False
    j = n - 1
    for i in range(n):
        a, b = vs[j], vs[i]
        if _on_segment(q, a, b):
            return True
        if (b[1] > py) != (a[1] > py):
            x_cross = b[0] + (py - b[1]) * (a[0] - b[0]) / (a[1] - b[1])
            if px < x_cross:
                inside = not inside
        j = i
    return inside


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, p: Polygon) -> np.ndarray:
    """Vectorized :func:`point_in_polygon` over coordinate arrays of equal shape."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    inside = np.zeros(xs.shape, dtype=bool)
    boundary = np.zeros(xs.shape, dtype=bool)
    vs = p.vertices
    n = len(vs)
    for i in range(n):
        ax, ay = vs[i - 1]
        bx, by = vs[i]
        cross = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        boundary |= (
            (np.abs(cross) <= COLLINEAR_EPS)
            & (xs >= min(ax, bx) - COLLINEAR_EPS)
            & (xs <= max(ax, bx) + COLLINEAR_EPS)
            & (ys >= min(ay, by) - COLLINEAR_EPS)
            & (ys <= max(ay, by) + COLLINEAR_EPS)
        )
        if ay == by:
            continue
        straddle = (by > ys) != (ay > ys)
        x_cross = bx + (ys - by) * (ax - bx) / (ay - by)
        inside ^= straddle & (xs < x_cross)
    return inside | boundary


def _require_convex(p: Polygon) -> None:
    if not p.is_convex():
        raise NotConvex("operation requires a convex polygon")


def _clean(vs: list[Point]) -> list[Point]:
    """Drop duplicate and collinear vertices from a closed ring."""
    out: list[Point] = []
    for v in vs:
        if not out or abs(out[-1][0] - v[0]) > COLLINEAR_EPS or abs(out[-1][1] - v[1]) > COLLINEAR_EPS:
            out.append(v)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= COLLINEAR_EPS and abs(out[0][1] - out[-1][1]) <= COLLINEAR_EPS:
        out.pop()
    changed = True
    while changed and len(out) >= 3:
        changed = False
        for i in range(len(out)):
            if abs(_cross(out[i - 1], out[i], out[(i + 1) % len(out)])) <= COLLINEAR_EPS:
                del out[i]
                changed = True
                break
    return out


def convex_intersection(a: Polygon, b: Polygon) -> Polygon | None:
    """Intersection of two convex polygons, or ``None`` when it has no area."""
    _require_convex(a)
    _require_convex(b)
    output = list(a.vertices)
    cv = b.vertices
    for i in range(len(cv)):
        if not output:
            break
        c0, c1 = cv[i - 1], cv[i]
        subject = output
        output = []
        for j in range(len(subject)):
            cur, prev = subject[j], subject[j - 1]
            cur_in = _cross(c0, c1, cur) >= -COLLINEAR_EPS
            prev_in = _cross(c0, c1, prev) >= -COLLINEAR_EPS
            if cur_in:
                if not prev_in:
                    output.append(_line_intersection(prev, cur, c0, c1))
                output.append(cur)
            elif prev_in:
                output.append(_line_intersection(prev, cur, c0, c1))
    output = _clean(output)
    if len(output) < 3 or _signed_area(output) <= COLLINEAR_EPS:
        return None
    return Polygon._trusted(output)


def _line_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Point:
    dx, dy = p2[0] - p1[0], p2[1] - p1[1]
    ex, ey = q2[0] - q1[0], q2[1] - q1[1]
    denom = dx * ey - dy * ex
    if denom == 0.0:
        return p2
    t = ((q1[0] - p1[0]) * ey - (q1[1] - p1[1]) * ex) / denom
    return (p1[0] + t * dx, p1[1] + t * dy)


def jaccard(a: Polygon, b: Polygon) -> float:
    """Intersection over union of two convex polygons."""
    inter = convex_intersection(a, b)
    if inter is None:
        return 0.0
    ia = inter.area
    union = a.area + b.area - ia
    return min(1.0, max(0.0, ia / union))


def polygons_intersect(a: Polygon, b: Polygon) -> bool:
    """True if two simple polygons share at least one point (boundary counts)."""
    ax0, ay0, ax1, ay1 = a.bbox()
    bx0, by0, bx1, by1 = b.bbox()
    if ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0:
        return False
    if point_in_polygon(a.vertices[0], b) or point_in_polygon(b.vertices[0], a):
        return True
    av, bv = a.vertices, b.vertices
    for i in range(len(av)):
        for j in range(len(bv)):
            if _segments_intersect(av[i - 1], av[i], bv[j - 1], bv[j]):
                return True
    return False


def raster_centers(bbox: tuple[float, float, float, float], cell: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinate grids covering ``bbox`` with square cells."""
    x0, y0, x1, y1 = bbox
    nx = max(1, int(math.ceil((x1 - x0) / cell)))
    ny = max(1, int(math.ceil((y1 - y0) / cell)))
    xs = x0 + (np.arange(nx) + 0.5) * cell
    ys = y0 + (np.arange(ny) + 0.5) * cell
    return np.meshgrid(xs, ys)


def rasterized_jaccard(a: Polygon, b: Polygon, cell: float) -> float:
    """Jaccard index over cell-center samples; works for non-convex polygons."""
    if not cell > 0:
        raise ValueError("cell must be positive")
    ax0, ay0, ax1, ay1 = a.bbox()
    bx0, by0, bx1, by1 = b.bbox()
    bbox = (min(ax0, bx0), min(ay0, by0), max(ax1, bx1), max(ay1, by1))
    xs, ys = raster_centers(bbox, cell)
    ma = _masked(xs, ys, a)
    mb = _masked(xs, ys, b)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        raise EmptyRaster(f"no cell center of size {cell} falls inside either polygon")
    return np.count_nonzero(ma & mb) / union


def _masked(xs: np.ndarray, ys: np.ndarray, p: Polygon) -> np.ndarray:
    # Only test samples inside the polygon's bounding box.
    x0, y0, x1, y1 = p.bbox()
    sel = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
    out = np.zeros(xs.shape, dtype=bool)
    out[sel] = points_in_polygon(xs[sel], ys[sel], p)
    return out
