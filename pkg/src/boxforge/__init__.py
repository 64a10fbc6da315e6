"""Detection post-processing: box ensembling, TTA merging, augmentation and COCO AP."""

__version__ = "0.1.0"

from boxforge.core import (
    BBox,
    Detection,
    GroundTruth,
    ImageBuffer,
    ImageMeta,
    clamp_to_unit,
    from_pixels,
    hflip,
    iou,
    iou_matrix,
    to_pixels,
)
from boxforge.evaluation import EvalConfig, EvalReport, average_precision, evaluate, match, render_table
from boxforge.fusion import FusedBox, FusionConfig, nms, wbf
from boxforge.tta import TtaBundle, TtaTransform, merge, remap

__all__ = [
    "BBox",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "FusedBox",
    "FusionConfig",
    "GroundTruth",
    "ImageBuffer",
    "ImageMeta",
    "TtaBundle",
    "TtaTransform",
    "average_precision",
    "clamp_to_unit",
    "evaluate",
    "from_pixels",
    "hflip",
    "iou",
    "iou_matrix",
    "match",
    "merge",
    "nms",
    "remap",
    "render_table",
    "to_pixels",
    "wbf",
]
