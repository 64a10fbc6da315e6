"""Box ensembling: greedy NMS and Weighted Boxes Fusion.

NMS keeps the best box of every overlapping group and discards the rest.
WBF keeps every box: overlapping predictions are clustered and each cluster
is replaced by a score-weighted average box, so three slightly wrong boxes
can average into a better one.
"""

from __future__ import annotations

import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from boxforge import _backend
from boxforge.core import BBox, Detection
from boxforge.errors import ConfigError, InputError

NMS_IOU_DEFAULT = 0.5
WBF_IOU_DEFAULT = 0.55


@dataclass(frozen=True)
class FusionConfig:
    """Fusion parameters.

    Attributes:
        iou_threshold: Overlap at which boxes are merged or suppressed.
            ``None`` picks the per-method default (0.55 WBF, 0.5 NMS).
        score_threshold: Detections scoring below this are dropped at entry.
        num_models: Ensemble size N used by the WBF score rescale.
        model_weights: Optional per-model score multipliers, indexed by
            ``Detection.model_id``.
    """

    iou_threshold: float | None = None
    score_threshold: float = 0.0
    num_models: int = 1
    model_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.iou_threshold is not None and not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError(f"score_threshold must be in [0, 1], got {self.score_threshold}")
        if self.num_models < 1:
            raise ConfigError(f"num_models must be >= 1, got {self.num_models}")
        if self.model_weights is not None:
            object.__setattr__(self, "model_weights", tuple(float(w) for w in self.model_weights))
            if len(self.model_weights) != self.num_models:
                raise ConfigError(
                    f"got {len(self.model_weights)} model weights for {self.num_models} models"
                )
            if any(not w > 0.0 for w in self.model_weights):
                raise ConfigError(f"model weights must be positive, got {self.model_weights}")

    def iou_for(self, method: str) -> float:
        if self.iou_threshold is not None:
            return self.iou_threshold
        return WBF_IOU_DEFAULT if method == "wbf" else NMS_IOU_DEFAULT


@dataclass(frozen=True)
class FusedBox:
    """One WBF cluster.

    ``members`` holds indices into the list passed to :func:`wbf`, in the
    order the members joined. ``raw_score`` is the mean member score before
    the ensemble-size rescale.
    """

    bbox: BBox
    score: float
    category_id: int
    cluster_size: int
    image_id: int = 0
    raw_score: float = 0.0
    members: tuple[int, ...] = field(default=(), compare=False)


def _single_image(dets) -> int:
    ids = {d.image_id for d in dets}
    if len(ids) > 1:
        raise InputError(f"expected detections from one image, got image_ids {sorted(ids)}")
    return ids.pop() if ids else 0


def _entry_filter(dets, score_threshold):
    """Indices of detections that pass the score threshold and have positive area."""
    return [
        i
        for i, d in enumerate(dets)
        if d.score >= score_threshold and d.bbox.x2 > d.bbox.x1 and d.bbox.y2 > d.bbox.y1
    ]


def _arrays(dets, idx):
    boxes = np.array([dets[i].bbox.as_tuple() for i in idx], dtype=np.float64).reshape(-1, 4)
    labels = np.array([dets[i].category_id for i in idx], dtype=np.int64)
    return boxes, labels


def nms(dets: list[Detection], cfg: FusionConfig | None = None) -> list[Detection]:
    """Greedy per-category non-maximum suppression on one image.

    Boxes are visited by descending score (ties in input order); each kept box
    suppresses every later same-category box with IoU >= the threshold. Kept
    detections are returned unchanged, highest score first.
    """
    cfg = cfg or FusionConfig()
    if not dets:
        return []
    _single_image(dets)
    idx = _entry_filter(dets, cfg.score_threshold)
    if not idx:
        return []
    scores = np.array([dets[i].score for i in idx], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    boxes, labels = _arrays(dets, idx)
    kept = _backend.kernels.nms_sorted(
        np.ascontiguousarray(boxes[order]), np.ascontiguousarray(labels[order]), cfg.iou_for("nms")
    )
    return [dets[idx[order[p]]] for p in kept]


def wbf(dets: list[Detection], cfg: FusionConfig | None = None) -> list[FusedBox]:
    """Weighted Boxes Fusion on one image.

    Detections (scores multiplied by their model weight) are visited by
    descending score. Each joins the first existing same-category cluster whose
    current fused box overlaps it by at least the IoU threshold, or opens a new
    cluster. A cluster's box is the score-weighted mean of its members, its raw
    score the mean member score, and its final score
    ``raw * min(T, N) / N`` for T members and N models.
    """
    cfg = cfg or FusionConfig()
    if not dets:
        return []
    image_id = _single_image(dets)
    n_models = cfg.num_models
    weights = cfg.model_weights
    if weights is not None:
        bad = sorted({d.model_id for d in dets if not 0 <= d.model_id < n_models})
        if bad:
            raise ConfigError(f"model_id {bad} out of range for {n_models} model weights")

    idx = _entry_filter(dets, cfg.score_threshold)
    if not idx:
        return []
    if weights is None:
        scores = np.array([dets[i].score for i in idx], dtype=np.float64)
    else:
        scores = np.array([dets[i].score * weights[dets[i].model_id] for i in idx], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    boxes, labels = _arrays(dets, idx)
    assign, fused, count, score_sum = _backend.kernels.wbf_cluster(
        np.ascontiguousarray(boxes[order]),
        np.ascontiguousarray(scores[order]),
        np.ascontiguousarray(labels[order]),
        cfg.iou_for("wbf"),
    )

    n_clusters = len(count)
    members: list[list[int]] = [[] for _ in range(n_clusters)]
    for pos, k in enumerate(assign):
        members[k].append(idx[order[pos]])
    cluster_labels = [dets[m[0]].category_id for m in members]

    raw = score_sum / count
    final = raw * np.minimum(count, n_models) / n_models
    # model weights > 1 can push a mean above 1; scores stay valid probabilities
    final = np.minimum(final, 1.0)
    out_order = np.argsort(-final, kind="stable")
    return [
        FusedBox(
            bbox=BBox.from_seq(fused[k]),
            score=float(final[k]),
            category_id=cluster_labels[k],
            cluster_size=int(count[k]),
            image_id=image_id,
            raw_score=float(raw[k]),
            members=tuple(members[k]),
        )
        for k in out_order
    ]


def fused_to_detection(fb: FusedBox, model_id: int = 0) -> Detection:
    return Detection(
        bbox=fb.bbox,
        score=fb.score,
        category_id=fb.category_id,
        model_id=model_id,
        image_id=fb.image_id,
    )


def worker_count(default: int | None = None) -> int:
    """Worker pool size; ``BOXFORGE_THREADS`` overrides."""
    env = os.environ.get("BOXFORGE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"BOXFORGE_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"BOXFORGE_THREADS must be >= 1, got {n}")
        return n
    return default or min(8, os.cpu_count() or 1)


def group_by_image(dets) -> dict[int, list]:
    groups: dict[int, list] = defaultdict(list)
    for d in dets:
        groups[d.image_id].append(d)
    return dict(sorted(groups.items()))


def fuse_images(dets, cfg: FusionConfig | None = None, method: str = "wbf", workers=None) -> list:
    """Run ``method`` per image and concatenate results in image_id order.

    Returns Detections for ``"nms"`` and FusedBoxes for ``"wbf"``.
    """
    if method not in ("nms", "wbf"):
        raise ConfigError(f"unknown fusion method {method!r}")
    fn = nms if method == "nms" else wbf
    groups = list(group_by_image(dets).values())
    n = workers or worker_count()
    if n == 1 or len(groups) < 2:
        results = [fn(g, cfg) for g in groups]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(lambda g: fn(g, cfg), groups))
    return [r for per_image in results for r in per_image]
