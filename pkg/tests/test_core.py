import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxforge.core import (
    BBox,
    Detection,
    ImageBuffer,
    ImageMeta,
    clamp_to_unit,
    from_pixels,
    hflip,
    iou,
    iou_matrix,
    to_pixels,
)
from boxforge.errors import InvalidGeometryError, InvalidMetaError, ShapeError, ValidationError

# on a 1e-6 grid so 1 - x stays exact enough for flip properties
unit = st.integers(0, 10**6).map(lambda k: k / 10**6)


@st.composite
def boxes(draw, positive=False):
    x1, x2 = sorted((draw(unit), draw(unit)))
    y1, y2 = sorted((draw(unit), draw(unit)))
    if positive and (x2 - x1 < 1e-6 or y2 - y1 < 1e-6):
        x1, x2 = min(x1, 0.5), max(x2, 0.5) + 0.01
        y1, y2 = min(y1, 0.5), max(y2, 0.5) + 0.01
    return BBox(x1, y1, min(x2, 1.0), min(y2, 1.0))


def test_iou_examples():
    a = BBox(0.1, 0.1, 0.5, 0.5)
    assert iou(a, a) == 1.0
    assert iou(BBox(0, 0, 0.2, 0.2), BBox(0.5, 0.5, 0.9, 0.9)) == 0.0
    # intersection 0.1*0.2 = 0.02, union 0.04 + 0.04 - 0.02 = 0.06
    assert iou(BBox(0, 0, 0.2, 0.2), BBox(0.1, 0, 0.3, 0.2)) == pytest.approx(1 / 3, abs=1e-12)


def test_iou_degenerate_is_zero():
    z = BBox(0.3, 0.3, 0.3, 0.5)
    assert iou(z, z) == 0.0
    assert iou(z, BBox(0, 0, 1, 1)) == 0.0


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes(positive=True), boxes(positive=True))
def test_iou_area_ratio_bound(a, b):
    lo, hi = sorted((a.area(), b.area()))
    assert iou(a, b) <= lo / hi + 1e-12


@given(boxes(positive=True))
def test_iou_self_is_one(a):
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


@given(boxes(), boxes())
def test_hflip_preserves_iou_and_is_involution(a, b):
    assert iou(hflip(a), hflip(b)) == pytest.approx(iou(a, b), abs=1e-12)
    assert hflip(hflip(a)).as_tuple() == pytest.approx(a.as_tuple(), abs=1e-15)


def test_hflip_examples():
    assert hflip(BBox(0, 0, 1, 1)) == BBox(0, 0, 1, 1)
    assert hflip(BBox(0.1, 0.2, 0.3, 0.4)).as_tuple() == pytest.approx((0.7, 0.2, 0.9, 0.4), abs=1e-15)


def test_iou_matrix_matches_scalar():
    rng = random.Random(3)
    bs = []
    for _ in range(40):
        x1, x2 = sorted((rng.random(), rng.random()))
        y1, y2 = sorted((rng.random(), rng.random()))
        bs.append(BBox(x1, y1, x2, y2))
    arr = np.array([b.as_tuple() for b in bs])
    m = iou_matrix(arr, arr)
    for i, a in enumerate(bs):
        for j, b in enumerate(bs):
            assert m[i, j] == iou(a, b)


@pytest.mark.parametrize(
    "raw, expected",
    [
        ((-0.1, 0, 0.5, 1.2), (0, 0, 0.5, 1.0)),
        ((0.2, 0.2, 0.8, 0.8), (0.2, 0.2, 0.8, 0.8)),
        ((0.8, 0.2, 0.3, 0.6), (0.3, 0.2, 0.8, 0.6)),
    ],
)
def test_clamp_to_unit(raw, expected):
    assert clamp_to_unit(BBox(*raw)).as_tuple() == expected


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_clamp_rejects_non_finite(bad):
    with pytest.raises(InvalidGeometryError):
        clamp_to_unit(BBox(0, bad, 0.5, 0.5))


@given(st.tuples(*[st.floats(-5, 5, allow_nan=False)] * 4))
def test_clamp_invariants(coords):
    b = clamp_to_unit(BBox(*coords))
    assert 0 <= b.x1 <= b.x2 <= 1 and 0 <= b.y1 <= b.y2 <= 1
    assert b.area() >= 0


def test_pixel_conversion_examples():
    m = ImageMeta(1, 100, 50)
    assert to_pixels(BBox(0, 0, 1, 1), m) == (0, 0, 100, 50)
    assert from_pixels((10, 5, 20, 10), m).as_tuple() == pytest.approx((0.1, 0.1, 0.3, 0.3), abs=1e-15)


def test_pixel_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = ImageMeta(1, int(rng.integers(1, 5000)), int(rng.integers(1, 5000)))
        x1, x2 = sorted(rng.random(2))
        y1, y2 = sorted(rng.random(2))
        b = BBox(x1, y1, x2, y2)
        back = from_pixels(to_pixels(b, m), m)
        assert back.as_tuple() == pytest.approx(b.as_tuple(), abs=1e-9)


def test_zero_sized_meta_rejected():
    with pytest.raises(InvalidMetaError):
        ImageMeta(1, 0, 50)


def test_detection_validation():
    with pytest.raises(ValidationError):
        Detection(BBox(0, 0, 1, 1), 1.5, 1)
    with pytest.raises(ValidationError):
        Detection(BBox(0, 0, 1, 1), 0.5, 0)


def test_image_buffer_shape_checked():
    ImageBuffer(2, 3, np.zeros((3, 2, 3), np.uint8))
    with pytest.raises(ShapeError):
        ImageBuffer(2, 3, np.zeros((2, 3, 3), np.uint8))
    with pytest.raises(ShapeError):
        ImageBuffer(2, 3, np.zeros((3, 2, 3), np.float32))
