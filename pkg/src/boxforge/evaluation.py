"""COCO-protocol average precision.

Reports AP@0.50:0.95, AP@0.50 and AP@0.75 with 101-point interpolation, a
single "all" area range and at most ``max_dets`` detections per image and
category.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from boxforge import _backend
from boxforge.core import Detection, GroundTruth, boxes_to_array, iou_matrix
from boxforge.errors import ConfigError, ReferentialIntegrityError

TP, FP, IGNORED = 1, 0, -1

COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = COCO_IOU_THRESHOLDS
    max_dets: int = 100
    recall_points: int = 101

    def __post_init__(self):
        thr = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", thr)
        if not thr:
            raise ConfigError("at least one IoU threshold is required")
        if any(not 0.0 < t < 1.0 for t in thr):
            raise ConfigError(f"IoU thresholds must lie in (0, 1), got {thr}")
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise ConfigError(f"IoU thresholds must be strictly increasing, got {thr}")
        if self.max_dets < 1:
            raise ConfigError(f"max_dets must be >= 1, got {self.max_dets}")
        if self.recall_points < 2:
            raise ConfigError(f"recall_points must be >= 2, got {self.recall_points}")


@dataclass(frozen=True)
class MatchResult:
    """Labels (TP/FP/IGNORED) aligned with the input detection order."""

    labels: tuple[int, ...]
    false_negatives: int


def _sorted_by_score(dets) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match(dets: list[Detection], gts: list[GroundTruth], t: float) -> MatchResult:
    """Greedy one-to-one matching for one image and one category.

    Detections are visited by descending score. Each takes the unmatched
    non-ignore ground truth with the highest IoU if that IoU reaches ``t``.
    Failing that, a detection overlapping an ignore region by at least ``t``
    is excluded from scoring; anything else is a false positive. Ignore
    regions use plain IoU, not intersection over detection area.
    """
    order = _sorted_by_score(dets)
    ious = iou_matrix(boxes_to_array([dets[i].bbox for i in order]), boxes_to_array([g.bbox for g in gts]))
    ignore = np.array([g.ignore for g in gts], dtype=np.uint8)
    lab = _backend.kernels.match_greedy(ious, ignore, np.array([t], dtype=np.float64))[0]
    labels = [FP] * len(dets)
    for pos, i in enumerate(order):
        labels[i] = int(lab[pos])
    n_pos = int(len(gts) - ignore.sum())
    return MatchResult(tuple(labels), n_pos - int((lab == TP).sum()))


def _recall_grid(recall_points: int) -> np.ndarray:
    return np.arange(recall_points, dtype=np.float64) / (recall_points - 1)


def precision_at_recalls(labels, num_gt: int, recall_points: int = 101) -> np.ndarray:
    """Interpolated precision sampled at evenly spaced recall levels.

    ``labels`` are in global descending-score order; IGNORED entries are
    skipped. Precision is made non-increasing from the right before sampling;
    recall levels never reached sample as 0.
    """
    lab = np.asarray(labels, dtype=np.int8)
    lab = lab[lab != IGNORED]
    rs = _recall_grid(recall_points)
    if lab.size == 0:
        return np.zeros_like(rs)
    tp = np.cumsum(lab == TP, dtype=np.float64)
    fp = np.cumsum(lab == FP, dtype=np.float64)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    inds = np.searchsorted(recall, rs, side="left")
    out = np.zeros_like(rs)
    hit = inds < len(recall)
    out[hit] = precision[inds[hit]]
    return out


def average_precision(labels, num_gt: int, recall_points: int = 101) -> float:
    """101-point interpolated AP; NaN when there is no positive ground truth."""
    if num_gt <= 0:
        return math.nan
    return float(precision_at_recalls(labels, num_gt, recall_points).mean())


@dataclass
class EvalReport:
    """Per-category, per-threshold AP plus the three headline aggregates.

    ``ap[category_id]`` lists AP per threshold (NaN where the category has no
    positive ground truth). ``precision[category_id]`` holds the sampled
    precision curves, one row per threshold. Aggregates are means over the
    categories present in the ground truth, or ``None`` when undefined.
    """

    iou_thresholds: tuple[float, ...]
    ap: dict[int, list[float]] = field(default_factory=dict)
    num_gt: dict[int, int] = field(default_factory=dict)
    precision: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    counts: dict[float, dict[str, int]] = field(default_factory=dict)
    ap_50_95: float | None = None
    ap_50: float | None = None
    ap_75: float | None = None

    def ap_at(self, category_id: int, threshold: float) -> float:
        i = _threshold_index(self.iou_thresholds, threshold)
        if i is None:
            raise KeyError(f"threshold {threshold} not evaluated")
        return self.ap[category_id][i]

    def to_dict(self, include_curves: bool = False) -> dict:
        def clean(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

        out = {
            "ap_50_95": clean(self.ap_50_95),
            "ap_50": clean(self.ap_50),
            "ap_75": clean(self.ap_75),
            "iou_thresholds": list(self.iou_thresholds),
            "per_category": {
                str(c): {"num_gt": self.num_gt.get(c, 0), "ap": [clean(v) for v in aps]}
                for c, aps in sorted(self.ap.items())
            },
            "counts": {f"{t:.2f}": dict(v) for t, v in self.counts.items()},
        }
        if include_curves:
            out["precision"] = {str(c): p.tolist() for c, p in sorted(self.precision.items())}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> EvalReport:
        thr = tuple(obj.get("iou_thresholds") or COCO_IOU_THRESHOLDS)
        rep = cls(iou_thresholds=thr)
        for c, entry in (obj.get("per_category") or {}).items():
            rep.ap[int(c)] = [math.nan if v is None else float(v) for v in entry.get("ap", [])]
            rep.num_gt[int(c)] = int(entry.get("num_gt", 0))
        for t, v in (obj.get("counts") or {}).items():
            rep.counts[float(t)] = dict(v)
        rep.ap_50_95 = obj.get("ap_50_95")
        rep.ap_50 = obj.get("ap_50")
        rep.ap_75 = obj.get("ap_75")
        return rep


def _threshold_index(thresholds, t) -> int | None:
    for i, v in enumerate(thresholds):
        if math.isclose(v, t, abs_tol=1e-9):
            return i
    return None


def _positive_area(b) -> bool:
    return b.x2 > b.x1 and b.y2 > b.y1


def evaluate(
    dets: list[Detection],
    gts: list[GroundTruth],
    cfg: EvalConfig | None = None,
    image_ids=None,
) -> EvalReport:
    """Evaluate detections against ground truth over all images.

    Args:
        dets: Detections for any number of images.
        gts: Ground truth for the same images.
        cfg: Thresholds and limits.
        image_ids: Known image ids. Defaults to the images that carry ground
            truth; detections on any other image are an input error.

    Raises:
        ReferentialIntegrityError: A detection references an unknown image.
    """
    cfg = cfg or EvalConfig()
    known = set(image_ids) if image_ids is not None else {g.image_id for g in gts}
    unknown = {d.image_id for d in dets if d.image_id not in known}
    if unknown:
        raise ReferentialIntegrityError("image_id", unknown)

    thresholds = np.array(cfg.iou_thresholds, dtype=np.float64)
    n_thr = len(thresholds)

    det_groups: dict[tuple[int, int], list[Detection]] = defaultdict(list)
    gt_groups: dict[tuple[int, int], list[GroundTruth]] = defaultdict(list)
    for d in dets:
        if _positive_area(d.bbox):
            det_groups[(d.category_id, d.image_id)].append(d)
    for g in gts:
        if _positive_area(g.bbox):
            gt_groups[(g.category_id, g.image_id)].append(g)

    categories = sorted({c for c, _ in det_groups} | {c for c, _ in gt_groups})
    images_by_cat: dict[int, set[int]] = defaultdict(set)
    for c, i in list(det_groups) + list(gt_groups):
        images_by_cat[c].add(i)

    report = EvalReport(iou_thresholds=tuple(cfg.iou_thresholds))
    tp_tot = np.zeros(n_thr, dtype=np.int64)
    fp_tot = np.zeros(n_thr, dtype=np.int64)
    fn_tot = np.zeros(n_thr, dtype=np.int64)

    for c in categories:
        scores_parts, label_parts = [], []
        num_gt = 0
        for img in sorted(images_by_cat[c]):
            d_list = det_groups.get((c, img), [])
            g_list = gt_groups.get((c, img), [])
            order = _sorted_by_score(d_list)[: cfg.max_dets]
            d_sorted = [d_list[i] for i in order]
            # non-ignore first, as in pycocotools; ties then favour real objects
            g_sorted = sorted(g_list, key=lambda g: g.ignore)
            ignore = np.array([g.ignore for g in g_sorted], dtype=np.uint8)
            n_pos = int(len(g_sorted) - ignore.sum())
            num_gt += n_pos
            if d_sorted:
                ious = iou_matrix(
                    boxes_to_array([d.bbox for d in d_sorted]), boxes_to_array([g.bbox for g in g_sorted])
                )
                lab = _backend.kernels.match_greedy(np.ascontiguousarray(ious), ignore, thresholds)
            else:
                lab = np.zeros((n_thr, 0), dtype=np.int8)
            n_tp = (lab == TP).sum(axis=1)
            tp_tot += n_tp
            fp_tot += (lab == FP).sum(axis=1)
            fn_tot += n_pos - n_tp
            scores_parts.append(np.array([d.score for d in d_sorted], dtype=np.float64))
            label_parts.append(lab)

        scores = np.concatenate(scores_parts) if scores_parts else np.zeros(0)
        labels = np.concatenate(label_parts, axis=1) if label_parts else np.zeros((n_thr, 0), np.int8)
        glob = np.argsort(-scores, kind="mergesort")
        labels = labels[:, glob]
        report.num_gt[c] = num_gt
        if num_gt > 0:
            curves = np.stack([precision_at_recalls(labels[t], num_gt, cfg.recall_points) for t in range(n_thr)])
            report.precision[c] = curves
            report.ap[c] = [float(v) for v in curves.mean(axis=1)]
        else:
            report.ap[c] = [math.nan] * n_thr

    for t, a, b, m in zip(cfg.iou_thresholds, tp_tot, fp_tot, fn_tot):
        report.counts[t] = {"tp": int(a), "fp": int(b), "fn": int(m)}

    present = [c for c in categories if report.num_gt[c] > 0]
    if present:
        table = np.array([report.ap[c] for c in present])
        report.ap_50_95 = float(table.mean())
        for attr, t in (("ap_50", 0.5), ("ap_75", 0.75)):
            i = _threshold_index(cfg.iou_thresholds, t)
            if i is not None:
                setattr(report, attr, float(table[:, i].mean()))
    return report


TABLE_HEADER = "Methods | AP@0.50:0.95 | AP@0.50 | AP@0.75"


def _pct(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return f"{100.0 * v:.1f}"


def render_table(rows) -> str:
    """Text table of the headline metrics as percentages, one row per report.

    ``rows`` is a sequence of ``(label, EvalReport)`` pairs, emitted in order.
    """
    rows = list(rows)
    if not rows:
        raise ConfigError("render_table needs at least one row")
    cells = [[label, _pct(r.ap_50_95), _pct(r.ap_50), _pct(r.ap_75)] for label, r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(4)]
    lines = [TABLE_HEADER]
    for row in cells:
        parts = [row[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(parts).rstrip())
    return "\n".join(lines) + "\n"
