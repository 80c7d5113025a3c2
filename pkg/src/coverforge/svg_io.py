"""SVG serialization of scenes (plus caption text) and raster export."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import numpy as np
from PIL import Image

from .caption.fonts import FontMetrics, fit_font_size
from .raster import render
from .scene import (MAX_STROKE_WIDTH, N_PATHS, POINTS_PER_PATH, REF_CANVAS,
                    CanvasSpec, CubicBezierPath, Scene)

SVG_NS = "http://www.w3.org/2000/svg"


class SvgParseError(Exception):
    """Raised for documents outside the subset this package emits."""


def _fmt(x):
    return f"{x:.3f}"


def _rgb(color):
    r, g, b = (int(round(c * 255)) for c in color)
    return f"rgb({r},{g},{b})"


def _path_d(points, size):
    p = points * size
    parts = [f"M {_fmt(p[0, 0])},{_fmt(p[0, 1])}"]
    for seg in range(4):
        c = p[3 * seg + 1: 3 * seg + 4]
        parts.append("C " + " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in c))
    parts.append("Z")
    return " ".join(parts)


def to_svg(scene: Scene, layout=None, texts=None,
           canvas: CanvasSpec | None = None, metrics: FontMetrics | None = None) -> str:
    """Serialize a scene (optionally with captions) to SVG text.

    Output is deterministic: fixed attribute order, 3-decimal coordinates.
    """
    canvas = canvas or CanvasSpec()
    size = canvas.visible_size
    metrics = metrics or FontMetrics()
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="{SVG_NS}" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'  <rect x="0" y="0" width="{size}" height="{size}" '
        f'fill="{_rgb(scene.canvas_color)}"/>',
    ]
    for path in scene.paths:
        width = path.stroke_width / REF_CANVAS * size
        lines.append(
            f'  <path d="{_path_d(path.points, size)}" '
            f'fill="{_rgb(path.fill[:3])}" fill-opacity="{_fmt(path.fill[3])}" '
            f'fill-rule="nonzero" stroke="{_rgb(path.stroke_color)}" '
            f'stroke-width="{_fmt(width)}"/>')
    if layout is not None and texts:
        for box, color, text in (
                (layout.artist_box, layout.artist_color, texts[0]),
                (layout.title_box, layout.title_color, texts[1])):
            font_size, _ = fit_font_size(box, text, metrics, canvas_size=size)
            x = box.x0 * size
            y = box.y0 * size + font_size  # baseline approximation
            lines.append(
                f'  <text x="{_fmt(x)}" y="{_fmt(y)}" '
                f'font-family="{metrics.family}" font-size="{_fmt(font_size)}" '
                f'fill="{_rgb(color)}">{_escape(text)}</text>')
    lines.append('</svg>')
    return "\n".join(lines) + "\n"


def _escape(text):
    return (text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


_RGB_RE = re.compile(r"rgb\((\d+),(\d+),(\d+)\)")


def _parse_rgb(s):
    m = _RGB_RE.fullmatch(s.strip())
    if not m:
        raise SvgParseError(f"unsupported color syntax {s!r}")
    return np.array([int(g) / 255.0 for g in m.groups()])


def _parse_d(d, size):
    tokens = d.replace(",", " ").split()
    cmds = [t for t in tokens if t in ("M", "C", "Z")]
    if cmds != ["M"] + ["C"] * 4 + ["Z"]:
        raise SvgParseError("path must be exactly M, 4 C commands, Z")
    try:
        nums = [float(t) for t in tokens if t not in ("M", "C", "Z")]
    except ValueError as exc:
        raise SvgParseError(f"unsupported path data token: {exc}") from exc
    if len(nums) != 2 * POINTS_PER_PATH:
        raise SvgParseError("wrong coordinate count in path")
    return np.array(nums).reshape(POINTS_PER_PATH, 2) / size


def parse_svg(text) -> Scene:
    """Recover a Scene from a document produced by ``to_svg``."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise SvgParseError(f"malformed XML: {exc}") from exc
    if root.tag not in ("svg", f"{{{SVG_NS}}}svg"):
        raise SvgParseError("not an SVG document")
    viewbox = root.get("viewBox")
    if not viewbox:
        raise SvgParseError("missing viewBox")
    vb = [float(v) for v in viewbox.split()]
    if vb[0] != 0 or vb[1] != 0 or vb[2] != vb[3]:
        raise SvgParseError("expected a square viewBox anchored at the origin")
    size = vb[2]

    def local(tag):
        return tag.rsplit("}", 1)[-1]

    canvas_color = None
    paths = []
    for el in root:
        tag = local(el.tag)
        if tag == "rect":
            canvas_color = _parse_rgb(el.get("fill", ""))
        elif tag == "path":
            fill_rgb = _parse_rgb(el.get("fill", ""))
            opacity = float(el.get("fill-opacity", "1"))
            stroke = _parse_rgb(el.get("stroke", "rgb(0,0,0)"))
            width = float(el.get("stroke-width", "0")) / size * REF_CANVAS
            paths.append(CubicBezierPath(
                points=_parse_d(el.get("d", ""), size),
                fill=np.concatenate([fill_rgb, [opacity]]),
                stroke_color=stroke,
                stroke_width=min(max(width, 0.0), MAX_STROKE_WIDTH),
            ))
        elif tag == "text":
            continue
        else:
            raise SvgParseError(f"unsupported element <{tag}>")
    if canvas_color is None:
        raise SvgParseError("missing background rect")
    if len(paths) != N_PATHS:
        raise SvgParseError(f"expected {N_PATHS} paths, found {len(paths)}")
    return Scene(canvas_color=canvas_color, paths=paths)


def export_raster(scene: Scene, size: int, path=None) -> np.ndarray:
    """Render at the requested resolution; optionally write a PNG."""
    if size < 1:
        raise ValueError("size must be >= 1")
    img = render(scene, size)
    if path is not None:
        arr = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(path, format="PNG")
    return img


def write_png(image, path):
    arr = np.clip(np.round(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")
