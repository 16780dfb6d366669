"""Polygonal semantic layer: labeled objects backed by evidence areas.

Each object keeps every convex area that was merged into it together with
the frame it came from. Existence belief is a clamped log-odds value; the
displayed shape is the evidence polygon whose centroid is nearest to the
mean of all evidence centroids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InvalidPolygon
from .geometry import (
    Point,
    Polygon,
    jaccard,
    point_in_polygon,
    polygons_intersect,
)

LOG_ODDS_LIMIT = 4.0


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def probability(log_odds: float) -> float:
    return 1.0 / (1.0 + math.exp(-log_odds))


@dataclass(frozen=True)
class MergeParams:
    jaccard_threshold: float = 0.2
    l_hit: float = 0.9
    l_miss: float = -0.4
    display_threshold: float = 0.75
    delete_threshold: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.jaccard_threshold <= 1.0:
            raise ValueError(f"jaccard_threshold must be in (0, 1], got {self.jaccard_threshold}")
        if not 0.0 < self.delete_threshold < self.display_threshold < 1.0:
            raise ValueError(
                "need 0 < delete_threshold < display_threshold < 1, got "
                f"delete={self.delete_threshold}, display={self.display_threshold}"
            )
        if not self.l_hit > 0:
            raise ValueError(f"l_hit must be positive, got {self.l_hit}")
        if not self.l_miss < 0:
            raise ValueError(f"l_miss must be negative, got {self.l_miss}")

    def misses_to_delete(self) -> int:
        """Consecutive misses that delete an object created by a single hit."""
        return max(1, math.ceil((self.l_hit - logit(self.delete_threshold)) / abs(self.l_miss)))


@dataclass(frozen=True)
class Evidence:
    polygon: Polygon
    frame: int


def _clamp(x: float) -> float:
    return max(-LOG_ODDS_LIMIT, min(LOG_ODDS_LIMIT, x))


def select_display(evidence: list[Evidence]) -> Polygon:
    """Evidence polygon whose centroid is closest to the mean centroid (earliest on ties)."""
    centroids = [e.polygon.centroid for e in evidence]
    mx = sum(c[0] for c in centroids) / len(centroids)
    my = sum(c[1] for c in centroids) / len(centroids)
    best = min(range(len(centroids)), key=lambda i: ((centroids[i][0] - mx) ** 2 + (centroids[i][1] - my) ** 2, i))
    return evidence[best].polygon


@dataclass
class SemanticObject:
    id: int
    label: str
    evidence: list[Evidence]
    log_odds: float
    display_area: Polygon = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("semantic object needs at least one evidence area")
        self.log_odds = _clamp(self.log_odds)
        self.refresh_display()

    def refresh_display(self) -> None:
        self.display_area = select_display(self.evidence)

    @property
    def probability(self) -> float:
        return probability(self.log_odds)


class SemanticLayer:
    def __init__(self, params: MergeParams | None = None):
        self.params = params or MergeParams()
        self.objects: dict[int, SemanticObject] = {}
        self.next_id = 1

    def __len__(self):
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects[i] for i in sorted(self.objects))

    def __eq__(self, other):
        if not isinstance(other, SemanticLayer):
            return NotImplemented
        return self.objects == other.objects

    def __repr__(self):
        return f"SemanticLayer({len(self.objects)} objects)"

    def get(self, object_id: int) -> SemanticObject:
        return self.objects[object_id]

    def add_object(self, label: str, evidence: list[Evidence], log_odds: float, object_id: int | None = None) -> SemanticObject:
        if object_id is None:
            object_id = self.next_id
        if object_id in self.objects:
            raise ValueError(f"duplicate object id {object_id}")
        obj = SemanticObject(object_id, label, list(evidence), log_odds)
        self.objects[object_id] = obj
        self.next_id = max(self.next_id, object_id + 1)
        return obj

    def integrate_evidence(
        self, label: str, area: Polygon, frame: int, params: MergeParams | None = None
    ) -> tuple[int, bool]:
        """Merge ``area`` into the best-overlapping same-label object or create a new one.

        Returns ``(object_id, created)``.
        """
        params = params or self.params
        best_id, best_j = None, 0.0
        for obj in self:
            if obj.label != label:
                continue
            j = jaccard(obj.display_area, area)
            # Iteration is by ascending id, so strict ">" keeps the lowest id on ties.
            if j > best_j:
                best_id, best_j = obj.id, j
        if best_id is not None and best_j >= params.jaccard_threshold:
            obj = self.objects[best_id]
            obj.evidence.append(Evidence(area, frame))
            obj.log_odds = _clamp(obj.log_odds + params.l_hit)
            obj.refresh_display()
            return best_id, False
        obj = self.add_object(label, [Evidence(area, frame)], params.l_hit)
        return obj.id, True

    def decay_unobserved(
        self, visibility: Polygon, evidenced: set[int], params: MergeParams | None = None
    ) -> list[int]:
        """Lower belief in visible objects that got no evidence; returns deleted ids."""
        params = params or self.params
        delete_at = logit(params.delete_threshold)
        removed = []
        for obj in list(self):
            if obj.id in evidenced:
                continue
            if not point_in_polygon(obj.display_area.centroid, visibility):
                continue
            obj.log_odds = _clamp(obj.log_odds + params.l_miss)
            if obj.log_odds <= delete_at:
                del self.objects[obj.id]
                removed.append(obj.id)
        return removed

    def is_displayed(self, obj: SemanticObject, params: MergeParams | None = None) -> bool:
        params = params or self.params
        return obj.probability >= params.display_threshold

    def displayed_objects(self, params: MergeParams | None = None) -> list[tuple[int, str, Polygon]]:
        return [(o.id, o.label, o.display_area) for o in self if self.is_displayed(o, params)]

    def search(self, label: str) -> list[Polygon]:
        return [area for _, lab, area in self.displayed_objects() if lab == label]

    def content(self, at) -> list[tuple[str, int]]:
        """Displayed objects at a point, or intersecting a query polygon."""
        if isinstance(at, Polygon):
            return [(label, oid) for oid, label, area in self.displayed_objects() if polygons_intersect(area, at)]
        return [(label, oid) for oid, label, area in self.displayed_objects() if point_in_polygon(at, area)]


def semantic_search(layer: SemanticLayer, label: str) -> list[Polygon]:
    return layer.search(label)


def semantic_content(layer: SemanticLayer, at: Point | Polygon) -> list[tuple[str, int]]:
    return layer.content(at)


# --- JSON persistence --------------------------------------------------------


def layer_to_dict(layer: SemanticLayer) -> dict:
    return {
        "objects": [
            {
                "id": o.id,
                "label": o.label,
                "log_odds": o.log_odds,
                "evidence": [{"frame": e.frame, "polygon": e.polygon.to_list()} for e in o.evidence],
            }
            for o in layer
        ]
    }


def layer_from_dict(doc, params: MergeParams | None = None) -> SemanticLayer:
    if not isinstance(doc, dict) or not isinstance(doc.get("objects"), list):
        raise FormatError("semantic layer JSON needs an 'objects' list")
    layer = SemanticLayer(params)
    for entry in doc["objects"]:
        try:
            oid = entry["id"]
            label = entry["label"]
            log_odds = float(entry["log_odds"])
            evidence = [Evidence(Polygon(e["polygon"]), int(e["frame"])) for e in entry["evidence"]]
        except (KeyError, TypeError, ValueError, InvalidPolygon) as exc:
            raise FormatError(f"bad semantic object entry: {exc}") from None
        if not isinstance(oid, int) or isinstance(oid, bool) or not isinstance(label, str):
            raise FormatError(f"bad id or label in object entry {oid!r}")
        if oid in layer.objects:
            raise FormatError(f"duplicate object id {oid}")
        if not evidence:
            raise FormatError(f"object {oid} has no evidence")
        layer.add_object(label, evidence, log_odds, object_id=oid)
    return layer


def dumps_semantic(layer: SemanticLayer) -> str:
    return json.dumps(layer_to_dict(layer), indent=1)


def loads_semantic(text: str | bytes, params: MergeParams | None = None) -> SemanticLayer:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid semantic layer JSON: {exc}") from None
    return layer_from_dict(doc, params)


def save_semantic(layer: SemanticLayer, path) -> None:
    Path(path).write_text(dumps_semantic(layer))


def load_semantic(path, params: MergeParams | None = None) -> SemanticLayer:
    return loads_semantic(Path(path).read_text(), params)
