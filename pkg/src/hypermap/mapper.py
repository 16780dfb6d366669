"""Build semantic and exploration layers from segmented detection frames.

Each frame carries the sensor pose, the sensor-frame footprint of everything
the sensor saw, and one labeled point set per detection. Processing a frame
projects the points to the map plane, hulls each detection into an evidence
area, then uses the hull of the footprint (the visibility area) both to decay
objects that were expected but not seen and to mark explored cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .core import Hypermap, LayerKind
from .errors import DegenerateInput, FormatError, MissingLayer, OutOfOrderFrame
from .geometry import Point, Polygon, convex_hull
from .grid import ExplorationGrid, OccupancyGrid, mark_explored
from .semantic import MergeParams, SemanticLayer

DEFAULT_MIN_POINTS = 5

SensorPoint = tuple[float, float, float]


def normalize_angle(theta: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    t = math.remainder(theta, 2.0 * math.pi)
    return math.pi if t == -math.pi else t


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        for v in (self.x, self.y, self.theta):
            if not math.isfinite(v):
                raise ValueError(f"non-finite pose component in {self!r}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def transform(self, px: float, py: float) -> Point:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return (c * px - s * py + self.x, s * px + c * py + self.y)

    def inverse_transform(self, wx: float, wy: float) -> Point:
        """Map-frame point to sensor frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx, dy = wx - self.x, wy - self.y
        return (c * dx + s * dy, -s * dx + c * dy)

    def compose(self, other: "Pose2D") -> "Pose2D":
        """``self * other``: apply ``other`` first, then ``self``."""
        x, y = self.transform(other.x, other.y)
        return Pose2D(x, y, self.theta + other.theta)

    def inverse(self) -> "Pose2D":
        x, y = self.inverse_transform(0.0, 0.0)
        return Pose2D(x, y, -self.theta)

    @property
    def position(self) -> Point:
        return (self.x, self.y)


def _sensor_point(p) -> SensorPoint:
    if len(p) not in (2, 3):
        raise ValueError(f"sensor point needs 2 or 3 coordinates, got {p!r}")
    x, y = float(p[0]), float(p[1])
    z = float(p[2]) if len(p) == 3 else 0.0
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise ValueError(f"non-finite sensor point {p!r}")
    return (x, y, z)


@dataclass(frozen=True)
class Detection:
    label: str
    points: tuple[SensorPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(_sensor_point(p) for p in self.points))


@dataclass(frozen=True)
class DetectionFrame:
    seq: int
    pose: Pose2D
    footprint: tuple[SensorPoint, ...] = ()
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "footprint", tuple(_sensor_point(p) for p in self.footprint))
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass
class FrameReport:
    seq: int
    visibility: Polygon | None = None
    integrated: list[tuple[str, int, bool]] = field(default_factory=list)
    dropped: list[tuple[str, str]] = field(default_factory=list)
    decayed_removed: list[int] = field(default_factory=list)
    newly_explored: int = 0

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "visibility": self.visibility.to_list() if self.visibility else None,
            "integrated": [{"label": lab, "id": oid, "created": c} for lab, oid, c in self.integrated],
            "dropped": [{"label": lab, "reason": r} for lab, r in self.dropped],
            "decayed_removed": list(self.decayed_removed),
            "newly_explored": self.newly_explored,
        }


def project_points(pose: Pose2D, pts: Iterable[Sequence[float]]) -> list[Point]:
    """Drop ``z`` and move sensor-frame points into the map frame."""
    return [pose.transform(p[0], p[1]) for p in pts]


def visibility_area(frame: DetectionFrame) -> Polygon | None:
    """Hull of the projected footprint plus the sensor origin, or ``None`` if degenerate."""
    if not frame.footprint:
        return None
    pts = project_points(frame.pose, frame.footprint)
    pts.append(frame.pose.position)
    try:
        return convex_hull(pts)
    except DegenerateInput:
        return None


def _unique_layer(h: Hypermap, kind: LayerKind):
    entries = h.layers_of_kind(kind)
    if len(entries) != 1:
        raise MissingLayer(f"expected exactly one {kind.value} layer, found {len(entries)}")
    return entries[0].payload


def process_frame(
    h: Hypermap,
    frame: DetectionFrame,
    params: MergeParams | None = None,
    min_points: int = DEFAULT_MIN_POINTS,
) -> FrameReport:
    semantic = _unique_layer(h, LayerKind.SEMANTIC)
    exploration = _unique_layer(h, LayerKind.EXPLORATION)
    report = FrameReport(frame.seq)

    evidenced: set[int] = set()
    for det in frame.detections:
        pts = set(project_points(frame.pose, det.points))
        if len(pts) < min_points:
            report.dropped.append((det.label, "TooFewPoints"))
            continue
        try:
            area = convex_hull(pts)
        except DegenerateInput:
            report.dropped.append((det.label, "Degenerate"))
            continue
        oid, created = semantic.integrate_evidence(det.label, area, frame.seq, params)
        evidenced.add(oid)
        report.integrated.append((det.label, oid, created))

    report.visibility = visibility_area(frame)
    if report.visibility is not None:
        report.decayed_removed = semantic.decay_unobserved(report.visibility, evidenced, params)
        report.newly_explored = mark_explored(exploration, report.visibility)
    return report


def run_log(
    h: Hypermap,
    frames: Iterable[DetectionFrame],
    params: MergeParams | None = None,
    min_points: int = DEFAULT_MIN_POINTS,
) -> list[FrameReport]:
    """Process frames in order; a non-increasing ``seq`` raises :class:`OutOfOrderFrame`.

    A fully materialized sequence is checked before anything is processed.
    """
    if isinstance(frames, Sequence):
        _check_order(frames)
    reports = []
    last = None
    for frame in frames:
        if last is not None and frame.seq <= last:
            raise OutOfOrderFrame(f"frame seq {frame.seq} follows {last}")
        last = frame.seq
        reports.append(process_frame(h, frame, params, min_points))
    return reports


def _check_order(frames: Sequence[DetectionFrame]) -> None:
    for prev, cur in zip(frames, frames[1:]):
        if cur.seq <= prev.seq:
            raise OutOfOrderFrame(f"frame seq {cur.seq} follows {prev.seq}")


# --- JSON Lines detection logs ----------------------------------------------


def frame_to_json(frame: DetectionFrame) -> dict:
    return {
        "seq": frame.seq,
        "pose": {"x": frame.pose.x, "y": frame.pose.y, "theta": frame.pose.theta},
        "footprint": [list(p) for p in frame.footprint],
        "detections": [{"label": d.label, "points": [list(p) for p in d.points]} for d in frame.detections],
    }


def frame_from_json(doc) -> DetectionFrame:
    try:
        seq = doc["seq"]
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise TypeError(f"seq must be an integer, got {seq!r}")
        pose = doc["pose"]
        detections = []
        for d in doc.get("detections", []):
            if not isinstance(d["label"], str):
                raise TypeError(f"detection label must be a string, got {d['label']!r}")
            detections.append(Detection(d["label"], d["points"]))
        return DetectionFrame(
            seq,
            Pose2D(float(pose["x"]), float(pose["y"]), float(pose["theta"])),
            doc.get("footprint", []),
            detections,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad detection frame: {exc}") from None


def iter_detection_log(path) -> Iterator[DetectionFrame]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            try:
                yield frame_from_json(doc)
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None


def read_detection_log(path) -> list[DetectionFrame]:
    return list(iter_detection_log(path))


def write_detection_log(path, frames: Iterable[DetectionFrame]) -> None:
    with open(path, "w") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_json(frame)) + "\n")


def new_mapping_hypermap(occupancy: OccupancyGrid, params: MergeParams | None = None) -> Hypermap:
    """Hypermap with ``occupancy``, a blank ``exploration`` grid on the same geometry and an empty ``semantic`` layer."""
    h = Hypermap()
    h.add_layer("occupancy", occupancy)
    h.add_layer("exploration", ExplorationGrid(occupancy.geometry))
    h.add_layer("semantic", SemanticLayer(params))
    return h
