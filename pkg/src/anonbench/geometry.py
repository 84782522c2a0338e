"""Axis-aligned box arithmetic: IoU, expansion, clipping.

Boxes use the (x, y, w, h) convention with the origin at the top-left and
half-open pixel intervals [x, x+w) x [y, y+h). Coordinates are real-valued;
rounding to pixels happens only where a box meets an image raster.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in pixel space: left edge, top edge, width, height."""

    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def is_positive(self) -> bool:
        return self.w > 0 and self.h > 0


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two positive-area boxes, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # areas from the same derived edges so iou(b, b) is exactly 1.0 in floats
    area_a = (a.x2 - a.x) * (a.y2 - a.y)
    area_b = (b.x2 - b.x) * (b.y2 - b.y)
    return inter / (area_a + area_b - inter)


def expand(b: BoundingBox, margin: float) -> BoundingBox:
    """Grow a box about its center so each side gains `margin` * side length per edge.

    The result has width w*(1+2*margin) and height h*(1+2*margin); it may extend
    past image bounds (clipping is a separate step).
    """
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    return BoundingBox(
        x=b.x - b.w * margin,
        y=b.y - b.h * margin,
        w=b.w * (1 + 2 * margin),
        h=b.h * (1 + 2 * margin),
    )


def clip(b: BoundingBox, image_w: float, image_h: float) -> BoundingBox | None:
    """Intersect a box with [0, image_w) x [0, image_h); None if the result is empty."""
    x1 = max(b.x, 0.0)
    y1 = max(b.y, 0.0)
    x2 = min(b.x2, float(image_w))
    y2 = min(b.y2, float(image_h))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return BoundingBox(x=x1, y=y1, w=x2 - x1, h=y2 - y1)
