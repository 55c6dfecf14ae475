"""Bounding boxes and the overlap measures built on them.

Boxes are center-format [x, y, w, h] in pixels throughout the package;
the on-disk trace format is top-left (x_tl, y_tl, w, h) and converted at
the I/O boundary. An "absent" sentinel (all NaN) marks frames where the
tracker produced no prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UsageError


@dataclass(frozen=True)
class BBox:
    x: float  # center
    y: float  # center
    w: float
    h: float

    @classmethod
    def absent(cls) -> "BBox":
        return cls(math.nan, math.nan, math.nan, math.nan)

    @property
    def is_absent(self) -> bool:
        return math.isnan(self.x) or math.isnan(self.y) or math.isnan(self.w) or math.isnan(self.h)

    @property
    def valid(self) -> bool:
        return not self.is_absent and self.w > 0 and self.h > 0

    # corner accessors (x1, y1) top-left / (x2, y2) bottom-right
    @property
    def x1(self) -> float:
        return self.x - self.w / 2.0

    @property
    def y1(self) -> float:
        return self.y - self.h / 2.0

    @property
    def x2(self) -> float:
        return self.x + self.w / 2.0

    @property
    def y2(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def center_distance(self, other: "BBox") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def clipped_to(self, width: float, height: float, min_size: float = 1.0) -> "BBox":
        """Intersect with the [0,width]x[0,height] frame, keeping at least min_size."""
        x1 = min(max(self.x1, 0.0), width - min_size)
        y1 = min(max(self.y1, 0.0), height - min_size)
        x2 = max(min(self.x2, float(width)), x1 + min_size)
        y2 = max(min(self.y2, float(height)), y1 + min_size)
        return BBox.from_corners(x1, y1, x2, y2)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; absent vs anything is 0."""
    if a.is_absent or b.is_absent:
        return 0.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def giou(a: BBox, b: BBox) -> float:
    """Generalized IoU in (-1, 1]: IoU minus the enclosing-box penalty."""
    for name, box in (("a", a), ("b", b)):
        if box.is_absent or box.w <= 0 or box.h <= 0:
            raise UsageError(f"giou: box {name} has non-positive size ({box})")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = a.area + b.area - inter
    cw = max(a.x2, b.x2) - min(a.x1, b.x1)
    ch = max(a.y2, b.y2) - min(a.y1, b.y1)
    enclosing = cw * ch
    return inter / union - (enclosing - union) / enclosing
