"""Font-size fitting for single-line captions.

Uses monospace-equivalent metrics for the bundled font: glyph advance and
line height are fixed fractions of the point size, so the largest size
that fits a box is a simple linear bound.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import Box

MIN_FONT_SIZE = 6.0


@dataclass
class FontMetrics:
    advance_ratio: float = 0.6      # glyph advance / point size
    line_height_ratio: float = 1.2  # line height / point size
    family: str = "DejaVu Sans"


def fit_font_size(box: Box, text: str, metrics: FontMetrics | None = None,
                  canvas_size: int = 128):
    """Largest single-line size fitting the box; floor at 6 pt.

    Returns (size, overflow) where ``overflow`` is True when even the
    floor size does not fit. Box coordinates are normalized [0,1].
    """
    if box.width <= 0 or box.height <= 0:
        raise ValueError("box must be non-degenerate")
    metrics = metrics or FontMetrics()
    box_w = box.width * canvas_size
    box_h = box.height * canvas_size
    size = box_h / metrics.line_height_ratio
    if text:
        size = min(size, box_w / (metrics.advance_ratio * len(text)))
    if size < MIN_FONT_SIZE:
        return MIN_FONT_SIZE, True
    return size, False
