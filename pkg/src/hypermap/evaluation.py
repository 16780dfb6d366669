"""Compare a generated semantic map against a labeled ground-truth map.

An object counts as detected when a generated object with the same label has
its centroid within ``radius`` meters of the ground-truth centroid. Matched
pairs are scored with the (rasterized) Jaccard index and centroid distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError
from .geometry import Polygon, rasterized_jaccard

DEFAULT_RADIUS = 1.0
DEFAULT_RASTER_CELL = 0.01


@dataclass
class GroundTruth:
    objects: list[tuple[str, Polygon]]
    ignore_labels: set[str] = field(default_factory=set)

    def counted(self) -> list[tuple[int, str, Polygon]]:
        return [(i, lab, p) for i, (lab, p) in enumerate(self.objects) if lab not in self.ignore_labels]


@dataclass(frozen=True)
class PairRecord:
    gt_index: int
    gen_index: int
    label: str
    jaccard: float
    centroid_dist: float


@dataclass(frozen=True)
class ClassRow:
    label: str
    ground_truth: int
    detected: int
    mean_jaccard: float | None
    mean_centroid_dist: float | None


@dataclass
class EvalReport:
    rows: list[ClassRow]
    total: ClassRow
    unmatched_generated: int
    pairs: list[PairRecord]

    def to_json(self) -> dict:
        def row(r: ClassRow) -> dict:
            return {
                "label": r.label,
                "ground_truth": r.ground_truth,
                "detected": r.detected,
                "mean_jaccard": r.mean_jaccard,
                "mean_centroid_dist": r.mean_centroid_dist,
            }

        return {
            "classes": [row(r) for r in self.rows],
            "total": row(self.total),
            "unmatched_generated": self.unmatched_generated,
            "pairs": [
                {
                    "gt_index": p.gt_index,
                    "gen_index": p.gen_index,
                    "label": p.label,
                    "jaccard": p.jaccard,
                    "centroid_dist": p.centroid_dist,
                }
                for p in self.pairs
            ],
        }

    def table(self) -> str:
        header = ("", "Ground truth", "Detected", "Jaccard", "Centroid dist.")
        body = [_fmt_row(r) for r in self.rows]
        total = _fmt_row(self.total)
        widths = [max(len(x[i]) for x in [header, total, *body]) for i in range(len(header))]

        def line(cells):
            return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

        rule = "-" * len(line(header))
        out = [line(header), rule, *(line(b) for b in body), rule, line(total)]
        out.append(f"False detections: {self.unmatched_generated}")
        return "\n".join(out)


def _fmt_row(r: ClassRow) -> tuple[str, ...]:
    j = "-" if r.mean_jaccard is None else f"{r.mean_jaccard:.2f}"
    d = "-" if r.mean_centroid_dist is None else f"{r.mean_centroid_dist:.3f}"
    return (r.label, str(r.ground_truth), str(r.detected), j, d)


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def match_objects(
    gen: list[tuple[str, Polygon]], gt: GroundTruth, radius: float = DEFAULT_RADIUS
) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of same-label pairs by ascending centroid distance."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    candidates = []
    for gi, glabel, gshape in gt.counted():
        gc = gshape.centroid
        for ni, (nlabel, nshape) in enumerate(gen):
            if nlabel != glabel:
                continue
            d = _dist(gc, nshape.centroid)
            if d <= radius:
                candidates.append((d, gi, ni))
    candidates.sort()
    used_gt, used_gen = set(), set()
    matches = []
    for _, gi, ni in candidates:
        if gi in used_gt or ni in used_gen:
            continue
        used_gt.add(gi)
        used_gen.add(ni)
        matches.append((gi, ni))
    return matches


def _mean(xs: list[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def evaluate(
    gen: list[tuple[str, Polygon]],
    gt: GroundTruth,
    raster_cell: float = DEFAULT_RASTER_CELL,
    radius: float = DEFAULT_RADIUS,
) -> EvalReport:
    matches = match_objects(gen, gt, radius)
    pairs = []
    for gi, ni in sorted(matches):
        label, gshape = gt.objects[gi]
        nshape = gen[ni][1]
        pairs.append(
            PairRecord(
                gi,
                ni,
                label,
                rasterized_jaccard(nshape, gshape, raster_cell),
                _dist(nshape.centroid, gshape.centroid),
            )
        )

    labels: list[str] = []
    for _, lab, _ in gt.counted():
        if lab not in labels:
            labels.append(lab)
    rows = []
    for lab in labels:
        mine = [p for p in pairs if p.label == lab]
        rows.append(
            ClassRow(
                lab,
                sum(1 for _, l2, _ in gt.counted() if l2 == lab),
                len(mine),
                _mean([p.jaccard for p in mine]),
                _mean([p.centroid_dist for p in mine]),
            )
        )
    total = ClassRow(
        "Total",
        sum(r.ground_truth for r in rows),
        len(pairs),
        _mean([p.jaccard for p in pairs]),
        _mean([p.centroid_dist for p in pairs]),
    )
    matched_gen = {ni for _, ni in matches}
    unmatched = sum(
        1 for ni, (lab, _) in enumerate(gen) if ni not in matched_gen and lab not in gt.ignore_labels
    )
    return EvalReport(rows, total, unmatched, pairs)


def ground_truth_from_dict(doc) -> GroundTruth:
    if not isinstance(doc, dict) or not isinstance(doc.get("objects"), list):
        raise FormatError("ground truth JSON needs an 'objects' list")
    objects = []
    for i, o in enumerate(doc["objects"]):
        try:
            label = o["label"]
            if not isinstance(label, str):
                raise TypeError("label must be a string")
            objects.append((label, Polygon(o["polygon"])))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise FormatError(f"ground truth object {i}: {exc}") from None
    ignore = doc.get("ignore_labels", [])
    if not isinstance(ignore, list) or not all(isinstance(x, str) for x in ignore):
        raise FormatError("ignore_labels must be a list of strings")
    return GroundTruth(objects, set(ignore))


def load_ground_truth(path) -> GroundTruth:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    return ground_truth_from_dict(doc)
