# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2,
                        double bx1, double by1, double bx2, double by2) noexcept nogil:
    cdef double iw = min(ax2, bx2) - max(ax1, bx1)
    cdef double ih = min(ay2, by2) - max(ay1, by1)
    cdef double inter, union_, area_a, area_b
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    area_a = max(ax2 - ax1, 0.0) * max(ay2 - ay1, 0.0)
    area_b = max(bx2 - bx1, 0.0) * max(by2 - by1, 0.0)
    union_ = area_a + area_b - inter
    if union_ <= 0.0:
        return 0.0
    return inter / union_


def nms_sorted(const double[:, ::1] boxes, const cnp.int64_t[::1] labels, double iou_thr):
    cdef Py_ssize_t n = boxes.shape[0]
    cdef Py_ssize_t i, j, k = 0
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] sup_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] keep_arr = np.empty(n, dtype=np.int64)
    cdef unsigned char[::1] suppressed = sup_arr
    cdef cnp.int64_t[::1] keep = keep_arr
    with nogil:
        for i in range(n):
            if suppressed[i]:
                continue
            keep[k] = i
            k += 1
            for j in range(i + 1, n):
                if suppressed[j] or labels[j] != labels[i]:
                    continue
                if _iou(boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                        boxes[j, 0], boxes[j, 1], boxes[j, 2], boxes[j, 3]) >= iou_thr:
                    suppressed[j] = 1
    return keep_arr[:k].copy()


def wbf_cluster(const double[:, ::1] boxes, const double[::1] scores,
                const cnp.int64_t[::1] labels, double iou_thr):
    cdef Py_ssize_t n = boxes.shape[0]
    cdef Py_ssize_t i, j, k, q, c = 0
    cdef double s
    assign_arr = np.empty(n, dtype=np.int64)
    fused_arr = np.empty((n, 4), dtype=np.float64)
    wcoords_arr = np.zeros((n, 4), dtype=np.float64)
    coords_arr = np.zeros((n, 4), dtype=np.float64)
    wsum_arr = np.zeros(n, dtype=np.float64)
    count_arr = np.zeros(n, dtype=np.int64)
    cl_labels_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] assign = assign_arr
    cdef double[:, ::1] fused = fused_arr
    cdef double[:, ::1] wcoords = wcoords_arr
    cdef double[:, ::1] coords = coords_arr
    cdef double[::1] wsum = wsum_arr
    cdef cnp.int64_t[::1] count = count_arr
    cdef cnp.int64_t[::1] cl_labels = cl_labels_arr
    with nogil:
        for i in range(n):
            k = -1
            for j in range(c):
                if cl_labels[j] != labels[i]:
                    continue
                if _iou(boxes[i, 0], boxes[i, 1], boxes[i, 2], boxes[i, 3],
                        fused[j, 0], fused[j, 1], fused[j, 2], fused[j, 3]) >= iou_thr:
                    k = j
                    break
            if k < 0:
                k = c
                c += 1
                cl_labels[k] = labels[i]
            s = scores[i]
            assign[i] = k
            for q in range(4):
                wcoords[k, q] += s * boxes[i, q]
                coords[k, q] += boxes[i, q]
            wsum[k] += s
            count[k] += 1
            for q in range(4):
                if count[k] == 1:
                    fused[k, q] = boxes[i, q]
                elif wsum[k] > 0.0:
                    fused[k, q] = wcoords[k, q] / wsum[k]
                else:
                    fused[k, q] = coords[k, q] / count[k]
    return (assign_arr, fused_arr[:c].copy(), count_arr[:c].copy(), wsum_arr[:c].copy())


def match_greedy(const double[:, ::1] ious, const unsigned char[::1] gt_ignore,
                 const double[::1] thresholds):
    cdef Py_ssize_t n_det = ious.shape[0]
    cdef Py_ssize_t n_gt = ious.shape[1]
    cdef Py_ssize_t n_thr = thresholds.shape[0]
    cdef Py_ssize_t ti, d, g, best
    cdef double t, v, best_iou
    out_arr = np.zeros((n_thr, n_det), dtype=np.int8)
    matched_arr = np.zeros(n_gt, dtype=np.uint8)
    cdef signed char[:, ::1] out = out_arr
    cdef unsigned char[::1] matched = matched_arr
    with nogil:
        for ti in range(n_thr):
            t = thresholds[ti]
            for g in range(n_gt):
                matched[g] = 0
            for d in range(n_det):
                best = -1
                best_iou = -1.0
                for g in range(n_gt):
                    if gt_ignore[g] or matched[g]:
                        continue
                    v = ious[d, g]
                    if v > best_iou:
                        best_iou = v
                        best = g
                if best >= 0 and best_iou >= t:
                    matched[best] = 1
                    out[ti, d] = 1
                    continue
                for g in range(n_gt):
                    if gt_ignore[g] and ious[d, g] >= t:
                        out[ti, d] = -1
                        break
    return out_arr
