"""Data model and box geometry.

Boxes are kept as normalized ``[x1, y1, x2, y2]`` fractions of the image width
and height. Pixel ``[x, y, w, h]`` only appears at the COCO I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from boxforge.errors import InvalidGeometryError, InvalidMetaError, ShapeError, ValidationError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized coordinates.

    No validation on construction: intermediate results (e.g. a jittered box
    before clamping) may leave the unit square. Use :func:`clamp_to_unit` to
    restore the invariants.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_seq(cls, seq) -> BBox:
        x1, y1, x2, y2 = seq
        return cls(float(x1), float(y1), float(x2), float(y2))


@dataclass(frozen=True)
class Detection:
    """A scored box produced by one model on one image."""

    bbox: BBox
    score: float
    category_id: int
    model_id: int = 0
    image_id: int = 0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score!r} outside [0, 1]")
        if self.category_id < 1:
            raise ValidationError(f"category_id {self.category_id!r} must be >= 1")


@dataclass(frozen=True)
class GroundTruth:
    """An annotated box. ``ignore`` carries COCO ``iscrowd``.

    ``ann_id`` is the COCO annotation id when the box came from a file.
    """

    bbox: BBox
    category_id: int
    image_id: int
    ignore: bool = False
    ann_id: int | None = None


@dataclass(frozen=True)
class ImageMeta:
    image_id: int
    width: int
    height: int
    file_name: str = ""

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidMetaError(
                f"image {self.image_id}: dimensions must be positive, got {self.width}x{self.height}"
            )


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """RGB8 image. ``pixels`` is a row-major ``(height, width, 3)`` uint8 array."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.shape != (self.height, self.width, 3):
            raise ShapeError(
                f"pixels shape {self.pixels.shape} does not match {self.height}x{self.width}x3"
            )

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> ImageBuffer:
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        return cls(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` box arrays.

    Same arithmetic as :func:`iou`, so threshold decisions agree exactly.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    pos = (iw > 0.0) & (ih > 0.0)
    inter = np.where(pos, iw * ih, 0.0)
    area_a = np.maximum(a[:, 2] - a[:, 0], 0.0) * np.maximum(a[:, 3] - a[:, 1], 0.0)
    area_b = np.maximum(b[:, 2] - b[:, 0], 0.0) * np.maximum(b[:, 3] - b[:, 1], 0.0)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=pos & (union > 0.0))
    return out


def clamp_to_unit(b: BBox) -> BBox:
    """Clip every coordinate to [0, 1] and restore corner ordering."""
    coords = b.as_tuple()
    if not all(math.isfinite(c) for c in coords):
        raise InvalidGeometryError(f"non-finite box coordinates: {coords}")
    x1, y1, x2, y2 = (min(1.0, max(0.0, c)) for c in coords)
    if x2 < x1:
        x1, x2 = x2, x1
    if y2 < y1:
        y1, y2 = y2, y1
    return BBox(x1, y1, x2, y2)


def hflip(b: BBox) -> BBox:
    """Mirror a box about the vertical center line of the image."""
    return BBox(1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2)


def _check_meta(m: ImageMeta) -> None:
    if not (m.width > 0 and m.height > 0):
        raise InvalidMetaError(f"image {m.image_id}: zero-sized image {m.width}x{m.height}")


def to_pixels(b: BBox, m: ImageMeta) -> tuple[float, float, float, float]:
    """Normalized box to a COCO ``(x, y, w, h)`` pixel rectangle."""
    _check_meta(m)
    return (b.x1 * m.width, b.y1 * m.height, (b.x2 - b.x1) * m.width, (b.y2 - b.y1) * m.height)


def from_pixels(rect, m: ImageMeta) -> BBox:
    """COCO ``(x, y, w, h)`` pixel rectangle to a normalized box."""
    _check_meta(m)
    x, y, w, h = (float(v) for v in rect)
    return BBox(x / m.width, y / m.height, (x + w) / m.width, (y + h) / m.height)


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` float64 array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)
