"""Annotation-aware augmentation: bbox-jitter, grid-mask, mix-up, rare-class oversampling.

Every random choice comes from a :func:`substream` keyed by a seed, a stream
name and (typically) an image id, so results do not depend on processing
order or worker count.
"""

from __future__ import annotations

import copy
import dataclasses
import math
import zlib
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import PurePosixPath

import numpy as np

from boxforge.core import BBox, GroundTruth, ImageBuffer, ImageMeta, clamp_to_unit, hflip
from boxforge.errors import ConfigError, ShapeError

_U64 = (1 << 64) - 1


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *keys)``."""
    entropy = [seed & _U64, zlib.crc32(name.encode())] + [k & _U64 for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class JitterConfig:
    amp_lo: float = 0.95
    amp_hi: float = 1.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.amp_lo <= self.amp_hi:
            raise ConfigError(f"need 0 < amp_lo <= amp_hi, got {self.amp_lo}, {self.amp_hi}")


@dataclass(frozen=True)
class GridMaskConfig:
    """Grid-mask parameters.

    ``keep_ratio`` is the kept fraction of each grid period along one axis;
    the dropped square has side ``round(d * (1 - keep_ratio))``.
    """

    d_min: int = 32
    d_max: int = 96
    keep_ratio: float = 0.5
    apply_prob: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.d_min <= self.d_max:
            raise ConfigError(f"need 2 <= d_min <= d_max, got {self.d_min}, {self.d_max}")
        if not 0.0 < self.keep_ratio < 1.0:
            raise ConfigError(f"keep_ratio must be in (0, 1), got {self.keep_ratio}")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ConfigError(f"apply_prob must be in [0, 1], got {self.apply_prob}")


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 1.5
    apply_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ConfigError(f"apply_prob must be in [0, 1], got {self.apply_prob}")


@dataclass(frozen=True)
class WeightedAnnotation:
    gt: GroundTruth
    weight: float

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ConfigError(f"annotation weight must be in (0, 1], got {self.weight}")


# --- bbox-jitter -----------------------------------------------------------


def scale_about_center(b: BBox, sx: float, sy: float) -> BBox:
    """Scale width by ``sx`` and height by ``sy`` keeping the center fixed."""
    dx = (sx - 1.0) * (b.x2 - b.x1) / 2.0
    dy = (sy - 1.0) * (b.y2 - b.y1) / 2.0
    return BBox(b.x1 - dx, b.y1 - dy, b.x2 + dx, b.y2 + dy)


def bbox_jitter(
    gts: list[GroundTruth],
    m: ImageMeta,
    cfg: JitterConfig | None = None,
    rng: np.random.Generator | None = None,
    clamp: bool = True,
) -> list[GroundTruth]:
    """Rescale each box about its center by independent uniform factors.

    Width and height factors are drawn from ``[amp_lo, amp_hi]``. Pixels are
    untouched. Pass ``clamp=False`` to inspect the unclamped boxes.
    """
    cfg = cfg or JitterConfig()
    if rng is None:
        rng = substream(cfg.seed, "bbox-jitter", m.image_id)
    factors = rng.uniform(cfg.amp_lo, cfg.amp_hi, size=(len(gts), 2))
    out = []
    for g, (sx, sy) in zip(gts, factors):
        b = scale_about_center(g.bbox, float(sx), float(sy))
        out.append(dataclasses.replace(g, bbox=clamp_to_unit(b) if clamp else b))
    return out


# --- grid-mask -------------------------------------------------------------


def drop_side(d: int, keep_ratio: float) -> int:
    """Side of the dropped square in a period of ``d`` pixels (half rounds up)."""
    return int(math.floor(d * (1.0 - keep_ratio) + 0.5))


def grid_keep_mask(width: int, height: int, d: int, dx: int, dy: int, side: int) -> np.ndarray:
    """Boolean ``(height, width)`` array, False where pixels are dropped."""
    cols = ((np.arange(width) + dx) % d) < side
    rows = ((np.arange(height) + dy) % d) < side
    return ~(rows[:, None] & cols[None, :])


def apply_grid(img: ImageBuffer, d: int, dx: int, dy: int, keep_ratio: float) -> ImageBuffer:
    """Zero every pixel whose shifted coordinates fall in a dropped grid cell."""
    side = drop_side(d, keep_ratio)
    if side == 0:
        return img
    keep = grid_keep_mask(img.width, img.height, d, dx, dy, side)
    pixels = img.pixels * keep[:, :, None].astype(np.uint8)
    return ImageBuffer(img.width, img.height, pixels)


def grid_mask(img: ImageBuffer, cfg: GridMaskConfig | None = None, rng: np.random.Generator | None = None) -> ImageBuffer:
    """Drop a periodic grid of squares with probability ``apply_prob``."""
    cfg = cfg or GridMaskConfig()
    if rng is None:
        rng = substream(cfg.seed, "grid-mask")
    if rng.random() >= cfg.apply_prob:
        return img
    d = int(rng.integers(cfg.d_min, cfg.d_max, endpoint=True))
    dx, dy = (int(v) for v in rng.integers(0, d, size=2))
    return apply_grid(img, d, dx, dy, cfg.keep_ratio)


# --- mix-up ----------------------------------------------------------------


def blend(
    a: ImageBuffer, a_gts: list[GroundTruth], b: ImageBuffer, b_gts: list[GroundTruth], lam: float
) -> tuple[ImageBuffer, list[WeightedAnnotation]]:
    """Blend ``lam * a + (1 - lam) * b`` and weight the two label sets.

    ``b``'s boxes are re-bound to ``a``'s image. Zero-weight annotations are
    dropped.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError(f"mix-up needs equal sizes, got {a.width}x{a.height} and {b.width}x{b.height}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixing weight must be in [0, 1], got {lam}")
    mixed = lam * a.pixels.astype(np.float64) + (1.0 - lam) * b.pixels.astype(np.float64)
    pixels = np.clip(np.floor(mixed + 0.5), 0, 255).astype(np.uint8)

    image_id = a_gts[0].image_id if a_gts else (b_gts[0].image_id if b_gts else 0)
    anns = []
    if lam > 0.0:
        anns += [WeightedAnnotation(g, lam) for g in a_gts]
    if lam < 1.0:
        anns += [
            WeightedAnnotation(dataclasses.replace(g, image_id=image_id, ann_id=None), 1.0 - lam)
            for g in b_gts
        ]
    return ImageBuffer(a.width, a.height, pixels), anns


def mix_up(
    a: ImageBuffer,
    a_gts: list[GroundTruth],
    b: ImageBuffer,
    b_gts: list[GroundTruth],
    cfg: MixupConfig | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[ImageBuffer, list[WeightedAnnotation]]:
    """Mix two same-sized images with ``lam ~ Beta(alpha, alpha)``.

    With probability ``1 - apply_prob`` nothing is mixed: ``a`` comes back
    with its own boxes at weight 1.
    """
    cfg = cfg or MixupConfig()
    if (a.width, a.height) != (b.width, b.height):
        raise ShapeError(f"mix-up needs equal sizes, got {a.width}x{a.height} and {b.width}x{b.height}")
    if rng is None:
        rng = substream(cfg.seed, "mix-up")
    if rng.random() >= cfg.apply_prob:
        return a, [WeightedAnnotation(g, 1.0) for g in a_gts]
    lam = float(rng.beta(cfg.alpha, cfg.alpha))
    return blend(a, a_gts, b, b_gts, lam)


# --- rare-class oversampling -------------------------------------------------

MIN_CROP_AREA = 0.5
MIN_KEPT_AREA = 0.25


@dataclass
class OversampleResult:
    """Augmented dataset: ``index`` holds originals plus copies; ``images`` the new pixels."""

    index: object
    images: dict[int, ImageBuffer] = field(default_factory=dict)
    rare_categories: frozenset[int] = frozenset()


def rare_categories(instance_counts: Mapping[int, int], min_count: int) -> frozenset[int]:
    return frozenset(c for c, n in instance_counts.items() if n < min_count)


def _pixel_span(lo: float, hi: float, size: int) -> tuple[int, int]:
    a = min(max(int(math.floor(lo * size)), 0), size)
    b = min(max(int(math.ceil(hi * size)), 0), size)
    if b <= a:
        a, b = (a, a + 1) if a < size else (size - 1, size)
    return a, b


def _sample_crop(rng, anchor: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer crop ``(x0, y0, cw, ch)`` containing ``anchor`` and covering >= half the image."""
    bx1, bx2 = _pixel_span(anchor.x1, anchor.x2, width)
    by1, by2 = _pixel_span(anchor.y1, anchor.y2, height)
    cw_min = max(bx2 - bx1, math.ceil(MIN_CROP_AREA * width))
    cw = int(rng.integers(cw_min, width, endpoint=True))
    ch_min = max(by2 - by1, math.ceil(MIN_CROP_AREA * width * height / cw))
    ch = int(rng.integers(ch_min, height, endpoint=True))
    x0 = int(rng.integers(max(0, bx2 - cw), min(bx1, width - cw), endpoint=True))
    y0 = int(rng.integers(max(0, by2 - ch), min(by1, height - ch), endpoint=True))
    return x0, y0, cw, ch


def _recrop_box(g: GroundTruth, meta: ImageMeta, x0: int, y0: int, cw: int, ch: int) -> BBox | None:
    W, H = meta.width, meta.height
    px1, py1, px2, py2 = g.bbox.x1 * W, g.bbox.y1 * H, g.bbox.x2 * W, g.bbox.y2 * H
    orig = (px2 - px1) * (py2 - py1)
    ix1, iy1 = max(px1, x0), max(py1, y0)
    ix2, iy2 = min(px2, x0 + cw), min(py2, y0 + ch)
    kept = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    if orig <= 0.0 or kept < MIN_KEPT_AREA * orig:
        return None
    return clamp_to_unit(BBox((ix1 - x0) / cw, (iy1 - y0) / ch, (ix2 - x0) / cw, (iy2 - y0) / ch))


def crop_and_flip(
    img: ImageBuffer, meta: ImageMeta, gts: list[GroundTruth], anchor: BBox, rng: np.random.Generator
) -> tuple[ImageBuffer, list[GroundTruth]]:
    """One oversampled copy: random crop around ``anchor``, then a coin-flip mirror.

    Returned boxes keep their categories but still carry the source image_id.
    """
    x0, y0, cw, ch = _sample_crop(rng, anchor, meta.width, meta.height)
    pixels = img.pixels[y0 : y0 + ch, x0 : x0 + cw]
    flip = rng.random() < 0.5
    if flip:
        pixels = pixels[:, ::-1]
    out = []
    for g in gts:
        b = _recrop_box(g, meta, x0, y0, cw, ch)
        if b is None:
            continue
        out.append(dataclasses.replace(g, bbox=hflip(b) if flip else b, ann_id=None))
    return ImageBuffer.from_array(pixels), out


def _copy_name(file_name: str, image_id: int, k: int) -> str:
    p = PurePosixPath(file_name or f"{image_id}.png")
    suffix = p.suffix if p.suffix.lower() in (".png", ".jpg", ".jpeg") else ".png"
    return str(p.with_name(f"{p.stem}_os{k}{suffix}"))


def oversample_rare_classes(
    index,
    images: Mapping[int, ImageBuffer] | Callable[[ImageMeta], ImageBuffer],
    min_count: int,
    copies: int = 6,
    seed: int = 0,
) -> OversampleResult:
    """Add ``copies`` cropped/flipped versions of every image holding a rare-class box.

    A category is rare when it has fewer than ``min_count`` instances. Each
    copy is a random crop covering at least half the image and fully
    containing one rare box, mirrored with probability 0.5. Boxes keeping
    less than a quarter of their area are dropped. The input index is left
    untouched; the returned index holds the originals plus the copies.

    Args:
        index: A :class:`~boxforge.coco_io.DatasetIndex`.
        images: Pixels per image id, or a loader called with the image meta.
        min_count: Rarity cut-off on per-category instance counts.
        copies: New images per qualifying image.
        seed: Root seed; each (image, copy) gets its own substream.
    """
    if copies < 1:
        raise ConfigError(f"copies must be >= 1, got {copies}")
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    rare = rare_categories(index.instance_counts, min_count)
    out = copy.deepcopy(index)
    result = OversampleResult(index=out, rare_categories=rare)
    by_image: dict[int, list[GroundTruth]] = {}
    for g in index.annotations:
        by_image.setdefault(g.image_id, []).append(g)
    todo = sorted(i for i, gs in by_image.items() if any(g.category_id in rare for g in gs))
    if not todo:
        return result

    load = images if callable(images) else images.__getitem__
    # ids are fixed up front so copies can be produced in any order
    base_image = max(index.images) + 1
    next_ann = max((g.ann_id for g in index.annotations if g.ann_id is not None), default=0) + 1
    for pos, image_id in enumerate(todo):
        meta = index.images[image_id]
        img = load(meta) if callable(images) else load(image_id)
        if (img.width, img.height) != (meta.width, meta.height):
            raise ShapeError(
                f"image {image_id}: pixels are {img.width}x{img.height}, annotations say {meta.width}x{meta.height}"
            )
        gts = by_image[image_id]
        anchors = [g.bbox for g in gts if g.category_id in rare]
        for k in range(copies):
            rng = substream(seed, "oversample", image_id, k)
            anchor = anchors[int(rng.integers(len(anchors)))]
            new_img, new_gts = crop_and_flip(img, meta, gts, anchor, rng)
            new_id = base_image + pos * copies + k
            out.images[new_id] = ImageMeta(new_id, new_img.width, new_img.height, _copy_name(meta.file_name, image_id, k))
            result.images[new_id] = new_img
            for g in new_gts:
                out.annotations.append(dataclasses.replace(g, image_id=new_id, ann_id=next_ann))
                next_ann += 1
    return result
