import math
import random

import numpy as np
import pytest

from boxforge.core import BBox, Detection, GroundTruth
from boxforge.errors import ConfigError, ReferentialIntegrityError
from boxforge.evaluation import (
    COCO_IOU_THRESHOLDS,
    FP,
    IGNORED,
    TP,
    EvalConfig,
    EvalReport,
    average_precision,
    evaluate,
    match,
    render_table,
)

from oracles import brute_force_coco


def gt(box, cat=1, image=1, ignore=False):
    return GroundTruth(BBox(*box), cat, image, ignore)


def det(box, score, cat=1, image=1):
    return Detection(BBox(*box), score, cat, 0, image)


def random_fixture(rng, n_images=20, max_boxes=50, n_cats=3):
    gts, dets = [], []
    for img in range(1, n_images + 1):
        for _ in range(rng.randint(0, max_boxes // 2)):
            cx, cy = rng.random(), rng.random()
            w, h = rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)
            box = (max(0, cx - w / 2), max(0, cy - h / 2), min(1, cx + w / 2), min(1, cy + h / 2))
            cat = rng.randint(1, n_cats)
            gts.append(gt(box, cat, img, ignore=rng.random() < 0.05))
            if rng.random() < 0.8:
                j = [rng.gauss(0, 0.02) for _ in range(4)]
                jb = sorted((box[0] + j[0], box[2] + j[2])), sorted((box[1] + j[1], box[3] + j[3]))
                dbox = (jb[0][0], jb[1][0], jb[0][1], jb[1][1])
                dets.append(det(dbox, round(rng.random(), 2), cat, img))
        for _ in range(rng.randint(0, max_boxes // 2)):
            x1, x2 = sorted((rng.random(), rng.random()))
            y1, y2 = sorted((rng.random(), rng.random()))
            dets.append(det((x1, y1, x2, y2), round(rng.random(), 2), rng.randint(1, n_cats), img))
    return dets, gts


def as_tuples(dets, gts):
    return (
        [(d.image_id, d.category_id, d.bbox.as_tuple(), d.score) for d in dets],
        [(g.image_id, g.category_id, g.bbox.as_tuple(), g.ignore) for g in gts],
    )


# --- match -----------------------------------------------------------------


def test_match_single_tp(backend):
    r = match([det((0, 0, 0.5, 0.5), 0.9)], [gt((0, 0, 0.5, 0.45))], 0.5)
    assert r.labels == (TP,)
    assert r.false_negatives == 0


def test_match_duplicate_is_fp(backend):
    g = gt((0, 0, 0.5, 0.5))
    r = match([det((0, 0, 0.5, 0.5), 0.8), det((0, 0, 0.5, 0.5), 0.9)], [g], 0.5)
    assert r.labels == (FP, TP)


def test_match_ignore_region_excluded(backend):
    r = match([det((0, 0, 0.5, 0.5), 0.9)], [gt((0, 0, 0.5, 0.5), ignore=True)], 0.5)
    assert r.labels == (IGNORED,)
    assert r.false_negatives == 0


def test_match_prefers_real_object_over_ignore(backend):
    real = gt((0, 0, 0.5, 0.4))
    crowd = gt((0, 0, 0.5, 0.5), ignore=True)
    r = match([det((0, 0, 0.5, 0.5), 0.9)], [crowd, real], 0.5)
    assert r.labels == (TP,)


def test_match_fn_count(backend):
    r = match([], [gt((0, 0, 0.5, 0.5)), gt((0.6, 0.6, 0.9, 0.9))], 0.5)
    assert r.false_negatives == 2


def test_raising_threshold_never_adds_tps(backend):
    rng = random.Random(1)
    dets, gts = random_fixture(rng, n_images=1)
    prev = None
    for t in COCO_IOU_THRESHOLDS:
        n = sum(1 for c in (1, 2, 3) for v in match(
            [d for d in dets if d.category_id == c], [g for g in gts if g.category_id == c], t
        ).labels if v == TP)
        if prev is not None:
            assert n <= prev
        prev = n


# --- average_precision -----------------------------------------------------


def test_ap_all_tp():
    assert average_precision([TP, TP, TP], 3) == 1.0


def test_ap_no_detections():
    assert average_precision([], 4) == 0.0


def test_ap_tp_fp_hand_value():
    # recall reaches 0.5 at precision 1: recall levels 0.00..0.50 (51 of 101) sample 1.0
    assert average_precision([TP, FP], 2) == pytest.approx(51 / 101, abs=1e-12)


def test_ap_no_ground_truth_is_nan():
    assert math.isnan(average_precision([FP], 0))


def test_ap_ignored_labels_skipped():
    assert average_precision([TP, IGNORED, FP], 2) == average_precision([TP, FP], 2)


def test_ap_lowest_fp_never_increases():
    rng = random.Random(7)
    for _ in range(200):
        labels = [rng.choice([TP, FP]) for _ in range(rng.randint(0, 15))]
        n = max(1, labels.count(TP) + rng.randint(0, 3))
        assert average_precision(labels + [FP], n) <= average_precision(labels, n) + 1e-15


# --- evaluate --------------------------------------------------------------


def test_evaluate_perfect(backend):
    gts = [gt((0.1, 0.1, 0.4, 0.4), 1, 1), gt((0.5, 0.5, 0.9, 0.8), 2, 1), gt((0.2, 0.3, 0.6, 0.7), 1, 2)]
    dets = [det(g.bbox.as_tuple(), 1.0, g.category_id, g.image_id) for g in gts]
    rep = evaluate(dets, gts)
    assert rep.ap_50_95 == rep.ap_50 == rep.ap_75 == 1.0
    assert rep.counts[0.5] == {"tp": 3, "fp": 0, "fn": 0}


def test_evaluate_iou_sweep(backend):
    # width shrunk to 0.6: iou with gt = 0.6 exactly (shared origin, same height)
    g = gt((0.0, 0.0, 0.5, 0.5))
    d = det((0.0, 0.0, 0.3, 0.5), 0.9)
    rep = evaluate([d], [g])
    assert rep.ap_50 == 1.0
    assert rep.ap_75 == 0.0
    aps = rep.ap[1]
    assert aps[:3] == [1.0, 1.0, 1.0]
    assert aps[3:] == [0.0] * 7
    assert rep.ap_50_95 == pytest.approx(0.3, abs=1e-12)


def test_evaluate_unknown_image_rejected():
    with pytest.raises(ReferentialIntegrityError) as exc:
        evaluate([det((0, 0, 1, 1), 0.5, image=99)], [gt((0, 0, 1, 1))])
    assert exc.value.ids == [99]


def test_evaluate_category_without_gt_not_averaged(backend):
    g = gt((0, 0, 0.5, 0.5), 1)
    rep = evaluate([det((0, 0, 0.5, 0.5), 0.9, 1), det((0.5, 0.5, 1, 1), 0.9, 2)], [g])
    assert rep.ap_50_95 == 1.0
    assert math.isnan(rep.ap[2][0])


def test_evaluate_max_dets(backend):
    g = gt((0.0, 0.0, 0.2, 0.2))
    junk = [det((0.5, 0.5, 0.6, 0.6), 0.9) for _ in range(3)]
    real = det((0.0, 0.0, 0.2, 0.2), 0.1)
    assert evaluate(junk + [real], [g], EvalConfig(max_dets=3)).ap_50 == 0.0
    assert evaluate(junk + [real], [g], EvalConfig(max_dets=4)).ap_50 > 0.0


def test_evaluate_monotone_score_transform_invariant(backend):
    rng = random.Random(12)
    dets, gts = random_fixture(rng, n_images=5)
    base = evaluate(dets, gts, image_ids=range(1, 6))
    warped = [Detection(d.bbox, d.score ** 3 / 2, d.category_id, 0, d.image_id) for d in dets]
    assert evaluate(warped, gts, image_ids=range(1, 6)).ap_50_95 == pytest.approx(base.ap_50_95, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_evaluate_matches_brute_force(backend, seed):
    rng = random.Random(seed)
    n_images = rng.randint(1, 20)
    dets, gts = random_fixture(rng, n_images=n_images)
    rep = evaluate(dets, gts, image_ids=range(1, n_images + 1))
    per_cat, ap, ap50, ap75 = brute_force_coco(*as_tuples(dets, gts), list(COCO_IOU_THRESHOLDS))
    assert rep.ap_50_95 == pytest.approx(ap, abs=1e-6)
    assert rep.ap_50 == pytest.approx(ap50, abs=1e-6)
    assert rep.ap_75 == pytest.approx(ap75, abs=1e-6)
    for c, aps in per_cat.items():
        assert rep.ap[c] == pytest.approx(aps, abs=1e-6)


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(iou_thresholds=(0.5, 0.5))
    with pytest.raises(ConfigError):
        EvalConfig(iou_thresholds=(0.0, 0.5))
    with pytest.raises(ConfigError):
        EvalConfig(max_dets=0)


def test_report_json_round_trip(backend):
    rng = random.Random(3)
    rep = evaluate(*random_fixture(rng, n_images=3), image_ids=range(1, 4))
    back = EvalReport.from_dict(rep.to_dict())
    assert back.ap_50_95 == rep.ap_50_95
    assert back.ap_75 == rep.ap_75
    d = rep.to_dict(include_curves=True)
    c = next(iter(rep.precision))
    assert np.array_equal(np.array(d["precision"][str(c)]), rep.precision[c])


# --- render_table ----------------------------------------------------------


def fixture_report(a, b, c):
    r = EvalReport(iou_thresholds=COCO_IOU_THRESHOLDS)
    r.ap_50_95, r.ap_50, r.ap_75 = a, b, c
    return r


def test_render_table_reference_row():
    text = render_table([("Ours", fixture_report(0.394, 0.563, 0.427))])
    lines = text.splitlines()
    assert lines[0] == "Methods | AP@0.50:0.95 | AP@0.50 | AP@0.75"
    assert lines[1] == "Ours  39.4  56.3  42.7"


def test_render_table_na_and_order():
    text = render_table([("B", fixture_report(None, None, None)), ("A", fixture_report(1.0, 1.0, 1.0))])
    rows = [line.split() for line in text.splitlines()[1:]]
    assert rows == [["B", "n/a", "n/a", "n/a"], ["A", "100.0", "100.0", "100.0"]]


def test_render_table_needs_rows():
    with pytest.raises(ConfigError):
        render_table([])
