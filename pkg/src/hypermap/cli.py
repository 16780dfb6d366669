"""Command line tool for building, exploring, querying, evaluating and rendering hypermaps.

Exit codes: 0 ok, 1 input/data error, 2 usage error, 3 exploration stall.
Diagnostics go to stderr as a single line starting with ``error:``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .core import LayerKind, load_hypermap, save_hypermap
from .errors import HypermapError, NoProgress, UnknownLayer
from .evaluation import DEFAULT_RADIUS, DEFAULT_RASTER_CELL, evaluate, load_ground_truth
from .geometry import Polygon
from .grid import load_map_yaml
from .mapper import DEFAULT_MIN_POINTS, iter_detection_log, new_mapping_hypermap, run_log
from .render import RenderStyle, render_svg
from .semantic import MergeParams
from .sim import explore, load_world, new_world_hypermap

CONFIG_ENV = "HYPERMAP_CONFIG"

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_STALL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    merge: MergeParams = field(default_factory=MergeParams)
    min_points: int = DEFAULT_MIN_POINTS
    radius: float = DEFAULT_RADIUS
    raster_cell: float = DEFAULT_RASTER_CELL
    render: RenderStyle = field(default_factory=RenderStyle)

    def __post_init__(self):
        if self.min_points < 3:
            raise ValueError(f"min_points must be at least 3, got {self.min_points}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.raster_cell > 0:
            raise ValueError(f"raster_cell must be positive, got {self.raster_cell}")


_MERGE_FLAGS = {f.name: f.name.replace("_", "-") for f in fields(MergeParams)}
_RENDER_FLAGS = {"pixels_per_meter": "pixels-per-meter"}


def _read_config_file(path: str) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path}: invalid YAML") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"config {path}: must be a mapping")
    return doc


def _pick(args, name: str, section: dict, default):
    v = getattr(args, name, None)
    return section.get(name, default) if v is None else v


def build_config(args: argparse.Namespace) -> CliConfig:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    doc = _read_config_file(path) if path else {}
    unknown = set(doc) - {"merge", "mapper", "eval", "render"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    merge = dict(doc.get("merge") or {})
    render = dict(doc.get("render") or {})
    mapper = doc.get("mapper") or {}
    ev = doc.get("eval") or {}
    for name in _MERGE_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            merge[name] = v
    for name in _RENDER_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            render[name] = v
    flat = {
        "min_points": _pick(args, "min_points", mapper, DEFAULT_MIN_POINTS),
        "radius": _pick(args, "radius", ev, DEFAULT_RADIUS),
        "raster_cell": _pick(args, "raster_cell", ev, DEFAULT_RASTER_CELL),
    }
    try:
        return CliConfig(merge=MergeParams(**merge), render=RenderStyle(**render), **flat)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


# --- commands ------------------------------------------------------------------


def cmd_build(args, cfg: CliConfig) -> int:
    occupancy = load_map_yaml(args.occupancy)
    h = new_mapping_hypermap(occupancy, cfg.merge)
    run_log(h, iter_detection_log(args.detections), cfg.merge, cfg.min_points)
    save_hypermap(h, args.out)
    return EXIT_OK


def cmd_explore(args, cfg: CliConfig) -> int:
    world = load_world(args.world)
    h = new_world_hypermap(world, cfg.merge)
    result = explore(world, h, cfg.merge, cfg.min_points, seed=args.seed)
    save_hypermap(h, args.out)
    if args.report:
        doc = result.to_json()
        doc["seed"] = world.seed if args.seed is None else args.seed
        Path(args.report).write_text(json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


def _parse_point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"malformed point {text!r}, expected 'x,y'") from None
    return (x, y)


def _read_area(path: str) -> Polygon:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError:
        raise UsageError(f"malformed area file {path}: invalid JSON") from None
    if isinstance(doc, dict):
        doc = doc.get("polygon")
    try:
        return Polygon(doc)
    except (TypeError, ValueError, IndexError) as exc:
        raise UsageError(f"malformed area polygon in {path}: {exc}") from None


def cmd_query(args, cfg: CliConfig) -> int:
    layers = args.layers.split(",") if args.layers else None
    if args.mode == "content":
        if (args.point is None) == (args.area is None):
            raise UsageError("content queries need exactly one of --point or --area")
        at = _parse_point(args.point) if args.point is not None else _read_area(args.area)
        h = load_hypermap(args.map)
        results = h.content(at, layers)
        doc = {
            "query": "content",
            "at": list(at) if isinstance(at, tuple) else {"polygon": at.to_list()},
            "layers": [r.to_json() for r in results],
        }
    else:
        if args.value is None:
            raise UsageError("search queries need --value")
        h = load_hypermap(args.map)
        results = h.search(args.value, layers)
        doc = {"query": "search", "value": args.value, "layers": [r.to_json() for r in results]}
    print(json.dumps(doc))
    return EXIT_OK


def cmd_eval(args, cfg: CliConfig) -> int:
    h = load_hypermap(args.map)
    truth = load_ground_truth(args.truth)
    gen = [
        (label, area)
        for e in h.layers_of_kind(LayerKind.SEMANTIC)
        for _, label, area in e.payload.displayed_objects(cfg.merge)
    ]
    report = evaluate(gen, truth, cfg.raster_cell, cfg.radius)
    Path(args.report).write_text(json.dumps(report.to_json(), indent=1) + "\n")
    print(report.table())
    return EXIT_OK


def cmd_render(args, cfg: CliConfig) -> int:
    h = load_hypermap(args.map)
    boundary = _read_area(args.boundary) if args.boundary else None
    Path(args.out).write_text(render_svg(h, boundary, cfg.render))
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config(p: argparse.ArgumentParser, merge=False, eval_=False, render=False) -> None:
    p.add_argument("--config", help=f"YAML config file (default: ${CONFIG_ENV})")
    if merge:
        for name, flag in _MERGE_FLAGS.items():
            p.add_argument(f"--{flag}", dest=name, type=float)
        p.add_argument("--min-points", dest="min_points", type=int)
    if eval_:
        p.add_argument("--radius", type=float)
        p.add_argument("--raster-cell", dest="raster_cell", type=float)
    if render:
        p.add_argument("--pixels-per-meter", dest="pixels_per_meter", type=float)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypermap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="build a hypermap from a detection log")
    p.add_argument("--detections", required=True)
    p.add_argument("--occupancy", required=True, help="occupancy map YAML sidecar")
    p.add_argument("--out", required=True)
    _add_config(p, merge=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("explore", help="run simulated boundary-constrained exploration")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--report")
    _add_config(p, merge=True)
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("query", help="content or search query on a hypermap")
    p.add_argument("mode", choices=("content", "search"))
    p.add_argument("--map", required=True)
    p.add_argument("--point")
    p.add_argument("--area")
    p.add_argument("--value")
    p.add_argument("--layers")
    _add_config(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score a hypermap against ground truth")
    p.add_argument("--map", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--report", required=True)
    _add_config(p, merge=True, eval_=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write an SVG snapshot of a hypermap")
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--boundary", help="JSON polygon drawn as the exploration boundary")
    _add_config(p, render=True)
    p.set_defaults(func=cmd_render)
    return parser


def _fail(code: int, message: str) -> int:
    print("error: " + " ".join(str(message).split()), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
        cfg = build_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except NoProgress as exc:
        p = exc.pose
        where = f" at pose {p.x},{p.y},{p.theta}" if p is not None else ""
        return _fail(EXIT_STALL, f"exploration made no progress{where}")
    except UnknownLayer as exc:
        return _fail(EXIT_DATA, exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_DATA, f"no such file: {exc.filename}")
    except OSError as exc:
        return _fail(EXIT_DATA, f"{exc.filename or ''}: {exc.strerror or exc}")
    except (DataError, HypermapError) as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
