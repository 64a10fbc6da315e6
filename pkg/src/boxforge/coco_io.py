"""COCO instances/results JSON and PNG/JPEG images.

Field names follow the COCO format: ``images[].{id,width,height,file_name}``,
``annotations[].{id,image_id,category_id,bbox,iscrowd,area}`` and
``results[].{image_id,category_id,bbox,score}``. Fields this toolkit does not
use are carried along and written back unchanged.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from boxforge.core import Detection, GroundTruth, ImageBuffer, ImageMeta, clamp_to_unit, from_pixels, to_pixels
from boxforge.errors import DecodeError, InputError, ParseError, ReferentialIntegrityError, ValidationError

log = logging.getLogger(__name__)


@dataclass
class LoadReport:
    clamped_boxes: int = 0


@dataclass
class DatasetIndex:
    """In-memory COCO dataset.

    ``raw_images``/``raw_annotations`` keep the original JSON records (keyed by
    id) so unknown fields survive a save. ``weights`` holds the optional
    per-annotation ``weight`` field written by mix-up.
    """

    images: dict[int, ImageMeta] = field(default_factory=dict)
    annotations: list[GroundTruth] = field(default_factory=list)
    categories: dict[int, str] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    raw_images: dict[int, dict] = field(default_factory=dict)
    raw_categories: dict[int, dict] = field(default_factory=dict)
    raw_annotations: dict[int, dict] = field(default_factory=dict)
    weights: dict[int, float] = field(default_factory=dict)
    report: LoadReport = field(default_factory=LoadReport)

    @property
    def instance_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in self.categories}
        for g in self.annotations:
            counts[g.category_id] = counts.get(g.category_id, 0) + 1
        return counts

    def annotations_for(self, image_id: int) -> list[GroundTruth]:
        return [g for g in self.annotations if g.image_id == image_id]

    def check(self) -> None:
        """Raise if any annotation references a missing image or category."""
        bad_img = {g.image_id for g in self.annotations if g.image_id not in self.images}
        if bad_img:
            raise ReferentialIntegrityError("image_id", bad_img)
        bad_cat = {g.category_id for g in self.annotations if g.category_id not in self.categories}
        if bad_cat:
            raise ReferentialIntegrityError("category_id", bad_cat)


def read_json(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, exc.start, "invalid UTF-8") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(path, offset, exc.msg) from exc


def _write_json(obj, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(obj, f)
    os.replace(tmp, path)


def _require(rec: dict, key: str, where: str):
    if key not in rec:
        raise InputError(f"{where}: missing field {key!r}")
    return rec[key]


def load_annotations(path) -> DatasetIndex:
    """Load a COCO instances file.

    Pixel boxes are normalized by their image's dimensions; boxes reaching
    outside the image are clamped and counted in ``index.report``.

    Raises:
        ParseError: Malformed JSON (with byte offset).
        ReferentialIntegrityError: Annotations referencing missing images or
            categories.
    """
    obj = read_json(path)
    if not isinstance(obj, dict):
        raise InputError(f"{path}: expected a JSON object at top level")
    return index_from_json(obj)


def index_from_json(obj: dict) -> DatasetIndex:
    idx = DatasetIndex()
    idx.extra = {k: v for k, v in obj.items() if k not in ("images", "annotations", "categories")}
    for rec in obj.get("images", []):
        image_id = int(_require(rec, "id", "image"))
        idx.images[image_id] = ImageMeta(
            image_id=image_id,
            width=int(_require(rec, "width", f"image {image_id}")),
            height=int(_require(rec, "height", f"image {image_id}")),
            file_name=str(rec.get("file_name", "")),
        )
        idx.raw_images[image_id] = rec
    for rec in obj.get("categories", []):
        cid = int(_require(rec, "id", "category"))
        idx.categories[cid] = str(rec.get("name", cid))
        idx.raw_categories[cid] = rec

    anns = obj.get("annotations", [])
    bad_img = {a.get("image_id") for a in anns if a.get("image_id") not in idx.images}
    if bad_img:
        raise ReferentialIntegrityError("image_id", bad_img)
    bad_cat = {a.get("category_id") for a in anns if a.get("category_id") not in idx.categories}
    if bad_cat:
        raise ReferentialIntegrityError("category_id", bad_cat)

    next_id = max((int(a["id"]) for a in anns if "id" in a), default=0) + 1
    for rec in anns:
        if "id" in rec:
            ann_id = int(rec["id"])
        else:
            ann_id, next_id = next_id, next_id + 1
        meta = idx.images[rec["image_id"]]
        raw_box = _require(rec, "bbox", f"annotation {ann_id}")
        box = from_pixels(raw_box, meta)
        clamped = clamp_to_unit(box)
        if clamped != box:
            idx.report.clamped_boxes += 1
        idx.annotations.append(
            GroundTruth(
                bbox=clamped,
                category_id=int(rec["category_id"]),
                image_id=int(rec["image_id"]),
                ignore=bool(rec.get("iscrowd", 0)),
                ann_id=ann_id,
            )
        )
        idx.raw_annotations[ann_id] = rec
        if "weight" in rec:
            idx.weights[ann_id] = float(rec["weight"])
    if idx.report.clamped_boxes:
        log.warning("clamped %d annotation boxes to their image bounds", idx.report.clamped_boxes)
    return idx


def annotation_record(g: GroundTruth, meta: ImageMeta, ann_id: int, weight=None, base=None) -> dict:
    """COCO annotation dict for ``g``; ``base`` supplies pass-through fields."""
    rec = copy.deepcopy(base) if base else {}
    x, y, w, h = to_pixels(g.bbox, meta)
    moved = not (
        base
        and base.get("image_id") == g.image_id
        and "bbox" in base
        and np.allclose(base["bbox"], [x, y, w, h], rtol=0.0, atol=1e-6)
    )
    rec.update(id=ann_id, image_id=g.image_id, category_id=g.category_id, iscrowd=int(g.ignore))
    if moved:
        rec.update(bbox=[x, y, w, h], area=w * h)
        # a pass-through mask no longer matches a moved box
        rec.pop("segmentation", None)
    if weight is not None and weight != 1.0:
        rec["weight"] = weight
    else:
        rec.pop("weight", None)
    return rec


def index_to_json(idx: DatasetIndex) -> dict:
    out = dict(idx.extra)
    images = []
    for image_id, meta in sorted(idx.images.items()):
        rec = dict(idx.raw_images.get(image_id, {}))
        rec.update(id=image_id, width=meta.width, height=meta.height, file_name=meta.file_name)
        images.append(rec)
    cats = []
    for cid, name in sorted(idx.categories.items()):
        rec = dict(idx.raw_categories.get(cid, {}))
        rec.update(id=cid, name=name)
        cats.append(rec)
    anns = []
    used = {g.ann_id for g in idx.annotations if g.ann_id is not None}
    next_id = max(used, default=0) + 1
    for g in idx.annotations:
        ann_id = g.ann_id
        if ann_id is None:
            ann_id, next_id = next_id, next_id + 1
        anns.append(
            annotation_record(
                g,
                idx.images[g.image_id],
                ann_id,
                weight=idx.weights.get(ann_id),
                base=idx.raw_annotations.get(ann_id),
            )
        )
    out.update(images=images, annotations=anns, categories=cats)
    return out


def save_annotations(idx: DatasetIndex, path) -> None:
    _write_json(index_to_json(idx), path)


def load_results(path, index: DatasetIndex, model_id: int = 0, frame: tuple[int, int] | None = None) -> list[Detection]:
    """Load a COCO results array.

    Args:
        path: Results JSON file.
        index: Dataset providing image dimensions.
        model_id: Tag stored on every detection.
        frame: ``(width, height)`` the pixel boxes refer to, when the
            detections were produced on a resized copy. Defaults to each
            image's own dimensions.

    Raises:
        ValidationError: A score outside [0, 1].
        ReferentialIntegrityError: An unknown image_id.
    """
    obj = read_json(path)
    if not isinstance(obj, list):
        raise InputError(f"{path}: expected a JSON array of results")
    return results_from_json(obj, index, model_id=model_id, frame=frame)


def results_from_json(recs, index: DatasetIndex, model_id: int = 0, frame=None) -> list[Detection]:
    bad = {r.get("image_id") for r in recs if r.get("image_id") not in index.images}
    if bad:
        raise ReferentialIntegrityError("image_id", bad)
    dets = []
    for n, r in enumerate(recs):
        score = float(_require(r, "score", f"result {n}"))
        if not (0.0 <= score <= 1.0):
            raise ValidationError(f"result {n}: score {score} outside [0, 1]")
        meta = index.images[r["image_id"]]
        if frame is not None:
            meta = ImageMeta(meta.image_id, frame[0], frame[1], meta.file_name)
        bbox = from_pixels(_require(r, "bbox", f"result {n}"), meta)
        if not all(math.isfinite(v) for v in bbox.as_tuple()):
            raise ValidationError(f"result {n}: non-finite bbox {r['bbox']}")
        dets.append(
            Detection(
                bbox=bbox,
                score=score,
                category_id=int(_require(r, "category_id", f"result {n}")),
                model_id=model_id,
                image_id=int(r["image_id"]),
            )
        )
    return dets


def results_to_json(dets, index: DatasetIndex) -> list[dict]:
    out = []
    for d in dets:
        x, y, w, h = to_pixels(d.bbox, index.images[d.image_id])
        out.append(
            {"image_id": d.image_id, "category_id": d.category_id, "bbox": [x, y, w, h], "score": d.score}
        )
    return out


def save_results(dets, index: DatasetIndex, path) -> None:
    """Write detections (or fused boxes) as a COCO results array."""
    _write_json(results_to_json(dets, index), path)


def gt_as_results(idx: DatasetIndex, score: float = 1.0) -> list[Detection]:
    """Ground truth turned into perfect detections (non-ignore boxes only)."""
    return [
        Detection(bbox=g.bbox, score=score, category_id=g.category_id, image_id=g.image_id)
        for g in idx.annotations
        if not g.ignore
    ]


def load_image(path) -> ImageBuffer:
    """Decode a PNG or JPEG into an RGB8 buffer; grayscale expands to r=g=b."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"{path}: unsupported format {im.format}")
            im.load()
            if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
                im = im.convert("RGBA").convert("RGB")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            return ImageBuffer.from_array(np.asarray(im, dtype=np.uint8))
    except DecodeError:
        raise
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def save_image(img: ImageBuffer, path) -> None:
    """Encode by extension: ``.png`` lossless, ``.jpg``/``.jpeg`` at quality 95."""
    path = Path(path)
    ext = path.suffix.lower()
    im = Image.fromarray(img.pixels)
    if ext == ".png":
        im.save(path, format="PNG")
    elif ext in (".jpg", ".jpeg"):
        im.save(path, format="JPEG", quality=95)
    else:
        raise DecodeError(f"{path}: unsupported output format {ext!r}")
