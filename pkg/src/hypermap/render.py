"""SVG snapshots of a hypermap."""

from __future__ import annotations

import colorsys
import hashlib
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .core import Hypermap, LayerKind
from .geometry import Polygon
from .grid import GridGeometry, UNKNOWN_PIXEL, occupancy_to_pgm


@dataclass(frozen=True)
class RenderStyle:
    pixels_per_meter: float = 50.0
    explored_color: str = "#4caf50"
    explored_opacity: float = 0.25
    boundary_color: str = "#ff6f00"
    object_opacity: float = 0.55
    font_size: float = 10.0

    def __post_init__(self):
        if not self.pixels_per_meter > 0:
            raise ValueError("pixels_per_meter must be positive")
        if not 0.0 <= self.explored_opacity <= 1.0 or not 0.0 <= self.object_opacity <= 1.0:
            raise ValueError("opacities must be in [0, 1]")


def label_color(label: str) -> str:
    """Stable color per label, independent of Python's hash seed."""
    h = int.from_bytes(hashlib.md5(label.encode("utf-8")).digest()[:4], "big") / 2**32
    r, g, b = colorsys.hls_to_rgb(h, 0.5, 0.65)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


class _Canvas:
    def __init__(self, bounds, scale: float):
        self.x0, self.y0, self.x1, self.y1 = bounds
        self.scale = scale

    @property
    def size(self):
        return (self.x1 - self.x0) * self.scale, (self.y1 - self.y0) * self.scale

    def pt(self, x: float, y: float) -> tuple[float, float]:
        # SVG y grows downward; map y grows upward.
        return (x - self.x0) * self.scale, (self.y1 - y) * self.scale

    def points(self, poly: Polygon) -> str:
        return " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in (self.pt(x, y) for x, y in poly.vertices))


def _bounds(h: Hypermap, boundary: Polygon | None):
    boxes = []
    for e in h.layers:
        if e.kind is LayerKind.SEMANTIC:
            boxes.extend(o.display_area.bbox() for o in e.payload)
        else:
            boxes.append(e.payload.geometry.bounds())
    if boundary is not None:
        boxes.append(boundary.bbox())
    if not boxes:
        return (0.0, 0.0, 1.0, 1.0)
    return (
        min(b[0] for b in boxes),
        min(b[1] for b in boxes),
        max(b[2] for b in boxes),
        max(b[3] for b in boxes),
    )


def _runs(values: np.ndarray, geom: GridGeometry, canvas: _Canvas, parent: ET.Element, fill_for) -> None:
    """Emit one rect per horizontal run of equal values; ``fill_for`` returns attrs or None."""
    res = geom.resolution
    for r in range(geom.rows):
        row = values[r]
        c = 0
        while c < geom.cols:
            v = row[c]
            end = c + 1
            while end < geom.cols and row[end] == v:
                end += 1
            attrs = fill_for(v)
            if attrs is not None:
                x = geom.origin[0] + c * res
                y_top = geom.origin[1] + (r + 1) * res
                px, py = canvas.pt(x, y_top)
                ET.SubElement(
                    parent,
                    "rect",
                    x=_fmt(px),
                    y=_fmt(py),
                    width=_fmt((end - c) * res * canvas.scale),
                    height=_fmt(res * canvas.scale),
                    **attrs,
                )
            c = end


def render_svg(h: Hypermap, boundary: Polygon | None = None, style: RenderStyle | None = None) -> str:
    style = style or RenderStyle()
    canvas = _Canvas(_bounds(h, boundary), style.pixels_per_meter)
    w, hgt = canvas.size
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=_fmt(w),
        height=_fmt(hgt),
        viewBox=f"0 0 {_fmt(w)} {_fmt(hgt)}",
    )
    ET.SubElement(svg, "rect", width="100%", height="100%", fill="#ffffff")

    for e in h.layers:
        group = ET.SubElement(svg, "g", id=f"layer-{e.name}", **{"class": e.kind.value})
        if e.kind is LayerKind.OCCUPANCY:
            # Image rows are top-first; flip back so row 0 is the bottom of the map.
            pixels = np.flipud(occupancy_to_pgm(e.payload))

            def gray(v):
                if v == 255:
                    return None
                if v == UNKNOWN_PIXEL:
                    return {"fill": "#cdcdcd"}
                return {"fill": "#{0:02x}{0:02x}{0:02x}".format(int(v))}

            _runs(pixels, e.payload.geometry, canvas, group, gray)
        elif e.kind is LayerKind.EXPLORATION:
            fill = {"fill": style.explored_color, "fill-opacity": _fmt(style.explored_opacity)}
            _runs(e.payload.cells, e.payload.geometry, canvas, group, lambda v: fill if v else None)

    for e in h.layers_of_kind(LayerKind.SEMANTIC):
        group = svg.find(f"g[@id='layer-{e.name}']")
        for oid, label, area in e.payload.displayed_objects():
            color = label_color(label)
            ET.SubElement(
                group,
                "polygon",
                points=canvas.points(area),
                fill=color,
                stroke=color,
                **{"fill-opacity": _fmt(style.object_opacity), "class": "object", "data-label": label, "data-id": str(oid)},
            )
            cx, cy = canvas.pt(*area.centroid)
            text = ET.SubElement(
                group,
                "text",
                x=_fmt(cx),
                y=_fmt(cy),
                **{"font-size": _fmt(style.font_size), "text-anchor": "middle", "class": "label"},
            )
            text.text = label

    if boundary is not None:
        ET.SubElement(
            svg,
            "polygon",
            points=canvas.points(boundary),
            fill="none",
            stroke=style.boundary_color,
            **{"stroke-width": "2", "class": "boundary"},
        )
    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode") + "\n"
