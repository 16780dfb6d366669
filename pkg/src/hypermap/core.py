"""The hypermap: an ordered set of named layers behind one position/value interface.

Positions are world ``(x, y)`` points in meters (or simple polygons for area
queries); values are plain strings. Each layer kind converts both into its
own representation:

* occupancy grids understand ``"occupied"``, ``"free"`` and ``"unknown"``;
* exploration grids understand ``"explored"`` and ``"unexplored"``;
* semantic layers treat any string as an object label.

Values outside a layer's vocabulary produce an empty result for that layer.
"""

from __future__ import annotations

import enum
import io
import re
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import yaml

from . import grid as gridmod
from .errors import DuplicateName, FormatError, OutOfBounds, UnknownLayer
from .geometry import Point, Polygon
from .grid import ExplorationGrid, GridIndex, OccupancyClass, OccupancyGrid, polygon_mask, world_to_grid
from .semantic import SemanticLayer, dumps_semantic, loads_semantic

ARCHIVE_VERSION = 1
MANIFEST = "hypermap.yaml"
_NAME_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.-]*$")
# Fixed member timestamp so identical maps give identical archives.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class LayerKind(enum.Enum):
    OCCUPANCY = "occupancy"
    EXPLORATION = "exploration"
    SEMANTIC = "semantic"


_KIND_TYPES = {
    LayerKind.OCCUPANCY: OccupancyGrid,
    LayerKind.EXPLORATION: ExplorationGrid,
    LayerKind.SEMANTIC: SemanticLayer,
}

Payload = Union[OccupancyGrid, ExplorationGrid, SemanticLayer]


def kind_of(payload: Payload) -> LayerKind:
    for kind, cls in _KIND_TYPES.items():
        if isinstance(payload, cls):
            return kind
    raise TypeError(f"unsupported layer payload {type(payload).__name__}")


@dataclass
class LayerEntry:
    name: str
    kind: LayerKind
    payload: Payload

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ValueError(f"invalid layer name {self.name!r}")
        if not isinstance(self.payload, _KIND_TYPES[self.kind]):
            raise TypeError(f"layer {self.name!r}: {self.kind.value} layer cannot hold {type(self.payload).__name__}")


@dataclass(frozen=True)
class CellContent:
    index: GridIndex
    center: Point
    state: OccupancyClass | None = None
    probability: float | None = None
    explored: bool | None = None


@dataclass(frozen=True)
class LayerContent:
    """Content of one layer: grid cells, or ``(label, id)`` pairs for semantic layers."""

    layer: str
    kind: LayerKind
    cells: tuple[CellContent, ...] = ()
    objects: tuple[tuple[str, int], ...] = ()
    out_of_bounds: bool = False

    def to_json(self) -> dict:
        doc: dict = {"layer": self.layer, "kind": self.kind.value}
        if self.kind is LayerKind.SEMANTIC:
            doc["objects"] = [{"label": lab, "id": oid} for lab, oid in self.objects]
            return doc
        doc["out_of_bounds"] = self.out_of_bounds
        cells = []
        for c in self.cells:
            cell = {"index": list(c.index), "center": list(c.center)}
            if self.kind is LayerKind.OCCUPANCY:
                cell["state"] = c.state.value
                cell["probability"] = c.probability
            else:
                cell["explored"] = c.explored
            cells.append(cell)
        doc["cells"] = cells
        return doc


@dataclass(frozen=True)
class LayerSearch:
    """Positions holding a value in one layer: cell centers or object polygons."""

    layer: str
    kind: LayerKind
    positions: tuple[Point, ...] = ()
    polygons: tuple[Polygon, ...] = ()

    def to_json(self) -> dict:
        doc: dict = {"layer": self.layer, "kind": self.kind.value}
        if self.kind is LayerKind.SEMANTIC:
            doc["polygons"] = [p.to_list() for p in self.polygons]
        else:
            doc["positions"] = [list(p) for p in self.positions]
        return doc


OCCUPANCY_VALUES = {c.value: c for c in OccupancyClass}
EXPLORATION_VALUES = {"explored": 1, "unexplored": 0}


@dataclass
class Hypermap:
    layers: list[LayerEntry] = field(default_factory=list)

    def __post_init__(self):
        names = [e.name for e in self.layers]
        if len(set(names)) != len(names):
            raise DuplicateName("layer names must be unique")

    def __eq__(self, other):
        if not isinstance(other, Hypermap):
            return NotImplemented
        return [(e.name, e.kind, e.payload) for e in self.layers] == [
            (e.name, e.kind, e.payload) for e in other.layers
        ]

    # structure

    def add_layer(self, name: str, payload: Payload) -> LayerEntry:
        if any(e.name == name for e in self.layers):
            raise DuplicateName(f"layer {name!r} already exists")
        entry = LayerEntry(name, kind_of(payload), payload)
        self.layers.append(entry)
        return entry

    def remove_layer(self, name: str) -> LayerEntry:
        entry = self.entry(name)
        self.layers.remove(entry)
        return entry

    def list_layers(self) -> list[tuple[str, LayerKind]]:
        return [(e.name, e.kind) for e in self.layers]

    def entry(self, name: str) -> LayerEntry:
        for e in self.layers:
            if e.name == name:
                return e
        raise UnknownLayer(f"no layer named {name!r}")

    def layer(self, name: str) -> Payload:
        return self.entry(name).payload

    def layers_of_kind(self, kind: LayerKind) -> list[LayerEntry]:
        return [e for e in self.layers if e.kind is kind]

    def _select(self, layers) -> list[LayerEntry]:
        if layers is None:
            return list(self.layers)
        if isinstance(layers, str):
            layers = [layers]
        return [self.entry(n) for n in layers]

    # queries

    def content(self, at: Point | Polygon, layers=None) -> list[LayerContent]:
        """Content of each selected layer at a point or inside a polygon, in query order."""
        selected = self._select(layers)
        return [_layer_content(e, at) for e in selected]

    def search(self, value: str, layers=None) -> list[LayerSearch]:
        """Positions of ``value`` in each selected layer, in query order."""
        selected = self._select(layers)
        return [_layer_search(e, value) for e in selected]


def _grid_cell(entry: LayerEntry, idx: GridIndex) -> CellContent:
    layer = entry.payload
    center = gridmod.grid_to_world(layer.geometry, idx)
    if entry.kind is LayerKind.OCCUPANCY:
        return CellContent(idx, center, state=gridmod.classify(layer, idx), probability=layer.probability(idx))
    return CellContent(idx, center, explored=layer.is_explored(idx))


def _layer_content(entry: LayerEntry, at) -> LayerContent:
    if entry.kind is LayerKind.SEMANTIC:
        return LayerContent(entry.name, entry.kind, objects=tuple(entry.payload.content(at)))
    geom = entry.payload.geometry
    if isinstance(at, Polygon):
        rows, cols = np.nonzero(polygon_mask(geom, at))
        cells = tuple(_grid_cell(entry, (int(r), int(c))) for r, c in zip(rows, cols))
        return LayerContent(entry.name, entry.kind, cells=cells)
    try:
        idx = world_to_grid(geom, at)
    except OutOfBounds:
        return LayerContent(entry.name, entry.kind, out_of_bounds=True)
    return LayerContent(entry.name, entry.kind, cells=(_grid_cell(entry, idx),))


def _centers(geom, mask: np.ndarray) -> tuple[Point, ...]:
    rows, cols = np.nonzero(mask)
    return tuple(gridmod.grid_to_world(geom, (int(r), int(c))) for r, c in zip(rows, cols))


def _layer_search(entry: LayerEntry, value: str) -> LayerSearch:
    layer = entry.payload
    if entry.kind is LayerKind.SEMANTIC:
        return LayerSearch(entry.name, entry.kind, polygons=tuple(layer.search(value)))
    if entry.kind is LayerKind.OCCUPANCY:
        cls = OCCUPANCY_VALUES.get(value)
        if cls is None:
            return LayerSearch(entry.name, entry.kind)
        return LayerSearch(entry.name, entry.kind, positions=_centers(layer.geometry, layer.class_codes() == cls))
    bit = EXPLORATION_VALUES.get(value)
    if bit is None:
        return LayerSearch(entry.name, entry.kind)
    return LayerSearch(entry.name, entry.kind, positions=_centers(layer.geometry, layer.cells == bit))


def content(h: Hypermap, at, layers=None) -> list[LayerContent]:
    return h.content(at, layers)


def search(h: Hypermap, value: str, layers=None) -> list[LayerSearch]:
    return h.search(value, layers)


# --- archive persistence -----------------------------------------------------


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def dumps_hypermap(h: Hypermap) -> bytes:
    buf = io.BytesIO()
    manifest = {"version": ARCHIVE_VERSION, "layers": []}
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        members = []
        for e in h.layers:
            if e.kind is LayerKind.SEMANTIC:
                files = [f"{e.name}.json"]
                members.append((files[0], dumps_semantic(e.payload)))
            else:
                files = [f"{e.name}.pgm", f"{e.name}.yaml"]
                if e.kind is LayerKind.OCCUPANCY:
                    pixels = gridmod.occupancy_to_pgm(e.payload)
                    meta = gridmod.occupancy_meta(e.payload, files[0])
                else:
                    pixels = gridmod.exploration_to_pgm(e.payload)
                    meta = gridmod.exploration_meta(e.payload, files[0])
                members.append((files[0], gridmod.encode_pgm(pixels)))
                members.append((files[1], gridmod.dump_yaml(meta)))
            manifest["layers"].append({"name": e.name, "kind": e.kind.value, "files": files})
        _write_member(zf, MANIFEST, yaml.safe_dump(manifest, sort_keys=True))
        for name, data in members:
            _write_member(zf, name, data)
    return buf.getvalue()


def loads_hypermap(data: bytes) -> Hypermap:
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile as exc:
        raise FormatError(f"not a hypermap archive: {exc}") from None
    with zf:
        names = set(zf.namelist())
        if MANIFEST not in names:
            raise FormatError(f"archive has no {MANIFEST} manifest")
        manifest = gridmod.parse_yaml(zf.read(MANIFEST))
        if manifest.get("version") != ARCHIVE_VERSION:
            raise FormatError(f"unsupported archive version {manifest.get('version')!r}")
        entries = manifest.get("layers")
        if not isinstance(entries, list):
            raise FormatError("manifest 'layers' must be a list")
        h = Hypermap()
        for item in entries:
            if not isinstance(item, dict):
                raise FormatError(f"bad manifest layer entry {item!r}")
            name, files = item.get("name"), item.get("files")
            try:
                kind = LayerKind(item.get("kind"))
            except ValueError:
                raise FormatError(f"layer {name!r}: unknown kind {item.get('kind')!r}") from None
            if not isinstance(name, str) or not isinstance(files, list):
                raise FormatError(f"bad manifest layer entry {item!r}")
            missing = [f for f in files if f not in names]
            if missing:
                raise FormatError(f"layer {name!r}: archive lacks {missing}")
            payload = _load_layer(zf, name, kind, files)
            try:
                h.add_layer(name, payload)
            except (DuplicateName, ValueError) as exc:
                raise FormatError(str(exc)) from None
    return h


def _load_layer(zf: zipfile.ZipFile, name: str, kind: LayerKind, files: list[str]) -> Payload:
    if kind is LayerKind.SEMANTIC:
        json_files = [f for f in files if f.endswith(".json")]
        if len(files) != 1 or len(json_files) != 1:
            raise FormatError(f"semantic layer {name!r} needs exactly one .json file, got {files}")
        return loads_semantic(zf.read(json_files[0]))
    pgm = [f for f in files if f.endswith(".pgm")]
    yml = [f for f in files if f.endswith(".yaml")]
    if len(files) != 2 or len(pgm) != 1 or len(yml) != 1:
        raise FormatError(f"grid layer {name!r} needs one .pgm and one .yaml file, got {files}")
    meta = gridmod.parse_yaml(zf.read(yml[0]))
    pixels = gridmod.parse_pgm(zf.read(pgm[0]))
    if kind is LayerKind.OCCUPANCY:
        return gridmod.occupancy_from_pgm(pixels, meta)
    return gridmod.exploration_from_pgm(pixels, meta)


def save_hypermap(h: Hypermap, path) -> None:
    Path(path).write_bytes(dumps_hypermap(h))


def load_hypermap(path) -> Hypermap:
    return loads_hypermap(Path(path).read_bytes())
