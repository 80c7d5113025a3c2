"""Scene model: a canvas color plus three closed cubic Bezier paths.

Coordinates live in visible-canvas units: the visible square spans
[0,1] x [0,1] and generator outputs are expanded to the addressable
square [-0.5, 1.5] x [-0.5, 1.5] (twice the visible span per dimension).
Stroke widths are stored in pixels at the 128-px reference canvas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_PATHS = 3
POINTS_PER_PATH = 13          # one initial point + 3 per cubic segment, 4 segments
COORDS_PER_PATH = POINTS_PER_PATH * 2
PARAMS_PER_PATH = COORDS_PER_PATH + 1 + 4 + 3   # coords, stroke width, fill RGBA, stroke RGB
PARAM_COUNT = 3 + N_PATHS * PARAMS_PER_PATH      # 105

REF_CANVAS = 128              # reference canvas size in pixels
MAX_STROKE_WIDTH = 8.0        # pixels at the reference canvas


@dataclass
class CanvasSpec:
    visible_size: int = 128

    @property
    def addressable_span(self):
        return (-0.5, 1.5)


@dataclass
class CubicBezierPath:
    points: np.ndarray                      # [13, 2] canvas units
    fill: np.ndarray                        # RGBA in [0,1]
    stroke_color: np.ndarray                # RGB in [0,1]
    stroke_width: float                     # px at the reference canvas, [0, MAX_STROKE_WIDTH]

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.fill = np.asarray(self.fill, dtype=np.float64)
        self.stroke_color = np.asarray(self.stroke_color, dtype=np.float64)
        if self.points.shape != (POINTS_PER_PATH, 2):
            raise ValueError(f"path needs exactly {POINTS_PER_PATH} control points")
        if self.fill.shape != (4,) or np.any(self.fill < 0) or np.any(self.fill > 1):
            raise ValueError("fill must be RGBA in [0,1]")
        if self.stroke_color.shape != (3,) or np.any(self.stroke_color < 0) or np.any(self.stroke_color > 1):
            raise ValueError("stroke color must be RGB in [0,1]")
        if not (0 <= self.stroke_width <= MAX_STROKE_WIDTH):
            raise ValueError("stroke width out of range")

    def segment(self, i):
        """Control points of cubic segment i (0..3)."""
        return self.points[3 * i: 3 * i + 4]


@dataclass
class Scene:
    canvas_color: np.ndarray                # RGB in [0,1]
    paths: list = field(default_factory=list)

    def __post_init__(self):
        self.canvas_color = np.asarray(self.canvas_color, dtype=np.float64)
        if self.canvas_color.shape != (3,):
            raise ValueError("canvas color must be RGB")
        if len(self.paths) != N_PATHS:
            raise ValueError(f"scene requires exactly {N_PATHS} paths")


def bezier_eval(ctrl, t):
    """Cubic Bernstein evaluation for 4 control points at parameter(s) t."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("t must lie in [0,1]")
    u = 1.0 - t
    w = np.stack([u ** 3, 3 * u ** 2 * t, 3 * u * t ** 2, t ** 3], axis=-1)
    return w @ ctrl


def decode_scene(v, canvas: CanvasSpec | None = None) -> Scene:
    """Map a (0,1)^105 parameter vector to a Scene.

    Coordinates expand to the addressable square via x -> 2x - 0.5; the
    stroke parameter scales to the maximum width; colors pass through.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (PARAM_COUNT,):
        raise ValueError(f"expected {PARAM_COUNT} parameters, got {v.shape}")
    canvas_color = v[:3]
    paths = []
    for i in range(N_PATHS):
        o = 3 + i * PARAMS_PER_PATH
        coords = v[o: o + COORDS_PER_PATH].reshape(POINTS_PER_PATH, 2)
        paths.append(CubicBezierPath(
            points=2.0 * coords - 0.5,
            stroke_width=float(v[o + COORDS_PER_PATH]) * MAX_STROKE_WIDTH,
            fill=v[o + COORDS_PER_PATH + 1: o + COORDS_PER_PATH + 5],
            stroke_color=v[o + COORDS_PER_PATH + 5: o + COORDS_PER_PATH + 8],
        ))
    return Scene(canvas_color=canvas_color, paths=paths)


def encode_scene(scene: Scene) -> np.ndarray:
    """Inverse of decode_scene (clipped back into [0,1])."""
    v = np.empty(PARAM_COUNT)
    v[:3] = scene.canvas_color
    for i, p in enumerate(scene.paths):
        o = 3 + i * PARAMS_PER_PATH
        v[o: o + COORDS_PER_PATH] = ((p.points + 0.5) / 2.0).reshape(-1)
        v[o + COORDS_PER_PATH] = p.stroke_width / MAX_STROKE_WIDTH
        v[o + COORDS_PER_PATH + 1: o + COORDS_PER_PATH + 5] = p.fill
        v[o + COORDS_PER_PATH + 5: o + COORDS_PER_PATH + 8] = p.stroke_color
    return np.clip(v, 0.0, 1.0)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "canvas_color": scene.canvas_color.tolist(),
        "paths": [
            {
                "points": p.points.tolist(),
                "fill": p.fill.tolist(),
                "stroke_color": p.stroke_color.tolist(),
                "stroke_width": p.stroke_width,
            }
            for p in scene.paths
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    return Scene(
        canvas_color=np.array(d["canvas_color"]),
        paths=[
            CubicBezierPath(
                points=np.array(p["points"]),
                fill=np.array(p["fill"]),
                stroke_color=np.array(p["stroke_color"]),
                stroke_width=float(p["stroke_width"]),
            )
            for p in d["paths"]
        ],
    )


def random_scene(rng) -> Scene:
    """Uniform random parameter vector decoded to a scene (test helper)."""
    return decode_scene(rng.random(PARAM_COUNT))
