"""Vehicle counting toolkit for very-high-resolution satellite imagery.

Pipeline stages: semi-automatic annotation (flood fill + strokes), mask
counting with vote aggregation, detection-grid decoding with NMS, mixed-model
fusion, and a recall/precision evaluation harness. A local HTTP service and a
CLI bind the stages together.
"""

from .core import (
    ConfigError,
    ConflictError,
    CoordinateError,
    HsvColor,
    NotFoundError,
    PixelBox,
    RasterImage,
    StateError,
    TileGrid,
    ToolkitError,
    plan_tiles,
    rgb_to_hsv,
    stitch,
    sv_distance,
)
from .annotate import AnnotationSession, InstanceMask, Stroke, extract_boxes
from .counting import (
    Blob,
    CountEstimatorConfig,
    CountReport,
    GeometricTransform,
    ProbabilityMask,
    aggregate_votes,
    connected_components,
    count_image,
    estimate_count,
    threshold_votes,
)
from .detect import Anchor, Detection, DetectionGrid, compute_anchors, decode_grid, iou, nms
from .fusion import FusionConfig, fuse, fused_count
from .evaluate import EvalReport, GroundTruth, evaluate_run, match_detections, metrics
from .config import PipelineConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "Anchor",
    "AnnotationSession",
    "Blob",
    "ConfigError",
    "ConflictError",
    "CoordinateError",
    "CountEstimatorConfig",
    "CountReport",
    "Detection",
    "DetectionGrid",
    "EvalReport",
    "FusionConfig",
    "GeometricTransform",
    "GroundTruth",
    "HsvColor",
    "InstanceMask",
    "NotFoundError",
    "PipelineConfig",
    "PixelBox",
    "ProbabilityMask",
    "RasterImage",
    "StateError",
    "Stroke",
    "TileGrid",
    "ToolkitError",
    "aggregate_votes",
    "compute_anchors",
    "connected_components",
    "count_image",
    "decode_grid",
    "estimate_count",
    "evaluate_run",
    "extract_boxes",
    "fuse",
    "fused_count",
    "iou",
    "load_config",
    "match_detections",
    "metrics",
    "nms",
    "plan_tiles",
    "rgb_to_hsv",
    "stitch",
    "sv_distance",
    "threshold_votes",
]
