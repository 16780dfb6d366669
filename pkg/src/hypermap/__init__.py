"""Multi-layer spatial maps with polygonal semantic mapping and exploration."""

from .core import Hypermap, LayerKind, load_hypermap, save_hypermap
from .geometry import Polygon, convex_hull, jaccard, rasterized_jaccard
from .grid import ExplorationGrid, GridGeometry, OccupancyClass, OccupancyGrid
from .mapper import DetectionFrame, Detection, Pose2D, process_frame, run_log
from .semantic import MergeParams, SemanticLayer

__all__ = [
    "Detection",
    "DetectionFrame",
    "ExplorationGrid",
    "GridGeometry",
    "Hypermap",
    "LayerKind",
    "MergeParams",
    "OccupancyClass",
    "OccupancyGrid",
    "Polygon",
    "Pose2D",
    "SemanticLayer",
    "convex_hull",
    "jaccard",
    "load_hypermap",
    "process_frame",
    "rasterized_jaccard",
    "run_log",
    "save_hypermap",
]

__version__ = "0.1.0"
