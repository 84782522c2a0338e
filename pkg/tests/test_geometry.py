from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from anonbench.geometry import BoundingBox, clip, expand, iou
from oracles import iou_rasterized


def box(x, y, w, h):
    return BoundingBox(x=x, y=y, w=w, h=h)


boxes = st.builds(
    box,
    x=st.floats(-50, 50),
    y=st.floats(-50, 50),
    w=st.floats(0.1, 100),
    h=st.floats(0.1, 100),
)


class TestIou:
    def test_identity(self):
        assert iou(box(3.5, 2.0, 7.0, 9.0), box(3.5, 2.0, 7.0, 9.0)) == 1.0

    def test_disjoint(self):
        assert iou(box(0, 0, 10, 10), box(20, 20, 5, 5)) == 0.0

    def test_half_overlap(self):
        # intersection 5x10 = 50, union 100 + 100 - 50 = 150
        assert iou(box(0, 0, 10, 10), box(5, 0, 10, 10)) == pytest.approx(50 / 150)

    @given(a=boxes, b=boxes)
    def test_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0

    @given(a=boxes)
    def test_iou_one_iff_identical(self, a):
        assert iou(a, a) == 1.0
        shifted = box(a.x + a.w, a.y, a.w, a.h)
        assert iou(a, shifted) < 1.0

    def test_matches_rasterized_counting(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            ax, ay, bx, by = rng.integers(0, 64, size=4)
            aw, ah, bw, bh = rng.integers(1, 65, size=4)
            a, b = box(ax, ay, aw, ah), box(bx, by, bw, bh)
            assert iou(a, b) == iou_rasterized((ax, ay, aw, ah), (bx, by, bw, bh))


class TestExpand:
    def test_zero_margin(self):
        assert expand(box(10, 10, 20, 20), 0.0) == box(10, 10, 20, 20)

    def test_grows_about_center(self):
        assert expand(box(10, 10, 20, 20), 0.1) == box(8, 8, 24, 24)

    def test_may_exit_image_bounds(self):
        assert expand(box(0, 0, 10, 10), 0.5) == box(-5, -5, 20, 20)

    def test_negative_margin_rejected(self):
        with pytest.raises(ValueError):
            expand(box(0, 0, 10, 10), -0.1)

    @given(b=boxes, m=st.floats(0, 3))
    def test_area_scaling(self, b, m):
        assert expand(b, m).area == pytest.approx(b.area * (1 + 2 * m) ** 2)


class TestClip:
    def test_partial(self):
        assert clip(box(-5, -5, 20, 20), 100, 100) == box(0, 0, 15, 15)

    def test_fully_inside(self):
        assert clip(box(10, 10, 5, 5), 100, 100) == box(10, 10, 5, 5)

    def test_fully_outside(self):
        assert clip(box(200, 200, 10, 10), 100, 100) is None

    @given(b=boxes)
    def test_idempotent(self, b):
        once = clip(b, 60, 60)
        if once is None:
            return
        assert clip(once, 60, 60) == once
