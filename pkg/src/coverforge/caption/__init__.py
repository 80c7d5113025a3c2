from .canny import canny
from .geometry import Box, giou
from .model import CaptionLayout, CaptionNet, caption_forward, caption_train, prepare_input
from .fonts import FontMetrics, fit_font_size

__all__ = [
    "canny", "Box", "giou", "CaptionLayout", "CaptionNet", "caption_forward",
    "caption_train", "prepare_input", "FontMetrics", "fit_font_size",
]
