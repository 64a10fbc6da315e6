"""Pure-Python/numpy kernels, used when the compiled extension is unavailable.

Mirrors ``_kernels.pyx`` function for function. Inputs are assumed pre-sorted
and pre-validated by the callers in :mod:`boxforge.fusion` and
:mod:`boxforge.evaluation`.
"""

import numpy as np


def _iou_one_to_many(box, others):
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    pos = (iw > 0.0) & (ih > 0.0)
    inter = np.where(pos, iw * ih, 0.0)
    area = max(box[2] - box[0], 0.0) * max(box[3] - box[1], 0.0)
    areas = np.maximum(others[:, 2] - others[:, 0], 0.0) * np.maximum(others[:, 3] - others[:, 1], 0.0)
    union = area + areas - inter
    out = np.zeros(len(others), dtype=np.float64)
    np.divide(inter, union, out=out, where=pos & (union > 0.0))
    return out


def nms_sorted(boxes, labels, iou_thr):
    """Greedy NMS over score-sorted boxes; returns kept positions in order."""
    n = len(boxes)
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in range(n):
        if suppressed[i]:
            continue
        keep.append(i)
        rest = np.arange(i + 1, n)
        rest = rest[~suppressed[rest] & (labels[rest] == labels[i])]
        if rest.size:
            ov = _iou_one_to_many(boxes[i], boxes[rest])
            suppressed[rest[ov >= iou_thr]] = True
    return np.asarray(keep, dtype=np.int64)


def wbf_cluster(boxes, scores, labels, iou_thr):
    """Greedy first-match clustering against running fused boxes.

    Returns ``(assign, fused, count, score_sum)`` where ``assign[i]`` is the
    cluster index of input ``i`` and clusters are numbered in creation order.
    """
    n = len(boxes)
    assign = np.empty(n, dtype=np.int64)
    fused = np.empty((n, 4), dtype=np.float64)
    wcoords = np.zeros((n, 4), dtype=np.float64)
    coords = np.zeros((n, 4), dtype=np.float64)
    wsum = np.zeros(n, dtype=np.float64)
    count = np.zeros(n, dtype=np.int64)
    cl_labels = np.empty(n, dtype=np.int64)
    c = 0
    for i in range(n):
        k = -1
        if c:
            cand = np.flatnonzero(cl_labels[:c] == labels[i])
            if cand.size:
                ov = _iou_one_to_many(boxes[i], fused[cand])
                hit = np.flatnonzero(ov >= iou_thr)
                if hit.size:
                    k = int(cand[hit[0]])
        if k < 0:
            k = c
            c += 1
            cl_labels[k] = labels[i]
        s = scores[i]
        assign[i] = k
        wcoords[k] += s * boxes[i]
        coords[k] += boxes[i]
        wsum[k] += s
        count[k] += 1
        if count[k] == 1:
            fused[k] = boxes[i]
        elif wsum[k] > 0.0:
            fused[k] = wcoords[k] / wsum[k]
        else:
            fused[k] = coords[k] / count[k]
    score_sum = wsum[:c].copy()
    return assign, fused[:c].copy(), count[:c].copy(), score_sum


def match_greedy(ious, gt_ignore, thresholds):
    """COCO-style greedy matching of score-sorted detections to ground truth.

    Returns an int8 array of shape ``(len(thresholds), n_dets)`` holding
    1 (true positive), 0 (false positive) or -1 (matched an ignore region).
    """
    n_det, n_gt = ious.shape
    out = np.zeros((len(thresholds), n_det), dtype=np.int8)
    ignore = np.asarray(gt_ignore, dtype=bool)
    for ti, t in enumerate(thresholds):
        matched = np.zeros(n_gt, dtype=bool)
        for d in range(n_det):
            best = -1
            best_iou = -1.0
            for g in range(n_gt):
                if ignore[g] or matched[g]:
                    continue
                v = ious[d, g]
                if v > best_iou:
                    best_iou = v
                    best = g
            if best >= 0 and best_iou >= t:
                matched[best] = True
                out[ti, d] = 1
            elif n_gt and np.any(ignore & (ious[d] >= t)):
                out[ti, d] = -1
    return out
