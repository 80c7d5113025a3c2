"""Boxes and generalized intersection over union."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    @classmethod
    def canonical(cls, x0, y0, x1, y1):
        """Swap flipped corners so x0<x1, y0<y1."""
        return cls(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return max(0.0, self.width) * max(0.0, self.height)

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)


def giou(a: Box, b: Box) -> float:
    """Generalized IoU in [-1, 1]: IoU minus the empty fraction of the
    smallest enclosing box."""
    ix0, iy0 = max(a.x0, b.x0), max(a.y0, b.y0)
    ix1, iy1 = min(a.x1, b.x1), min(a.y1, b.y1)
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    union = a.area + b.area - inter
    iou = inter / union if union > 0 else 0.0
    cx0, cy0 = min(a.x0, b.x0), min(a.y0, b.y0)
    cx1, cy1 = max(a.x1, b.x1), max(a.y1, b.y1)
    c_area = (cx1 - cx0) * (cy1 - cy0)
    if c_area <= 0:
        return iou
    return iou - (c_area - union) / c_area
