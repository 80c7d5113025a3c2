"""Scene parameter decoding, Bezier evaluation and serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coverforge.scene import (MAX_STROKE_WIDTH, N_PATHS, PARAM_COUNT,
                              PARAMS_PER_PATH, CubicBezierPath, Scene,
                              bezier_eval, decode_scene, encode_scene,
                              random_scene, scene_from_dict, scene_to_dict)


class TestBezierEval:
    def test_endpoints(self):
        ctrl = np.array([[0.0, 0.0], [0.3, 1.0], [0.7, -1.0], [1.0, 0.5]])
        assert np.allclose(bezier_eval(ctrl, 0.0), ctrl[0])
        assert np.allclose(bezier_eval(ctrl, 1.0), ctrl[3])

    def test_degenerate_all_points_equal(self):
        ctrl = np.tile([[0.4, 0.6]], (4, 1))
        t = np.linspace(0, 1, 17)
        out = bezier_eval(ctrl, t)
        assert np.allclose(out, [0.4, 0.6])

    def test_collinear_midpoint(self):
        # control points evenly spaced on a line: curve is that line,
        # arc-length parameterized, so t=0.5 is the midpoint
        a, b = np.array([0.1, 0.2]), np.array([0.9, 0.8])
        ctrl = np.stack([a + (b - a) * s for s in (0, 1 / 3, 2 / 3, 1)])
        assert np.allclose(bezier_eval(ctrl, 0.5), (a + b) / 2)

    def test_rejects_t_outside_unit_interval(self):
        ctrl = np.zeros((4, 2))
        with pytest.raises(ValueError):
            bezier_eval(ctrl, 1.5)
        with pytest.raises(ValueError):
            bezier_eval(ctrl, [-0.1, 0.5])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
    def test_convex_hull_property(self, seed, t):
        ctrl = np.random.default_rng(seed).random((4, 2))
        p = bezier_eval(ctrl, t)
        assert np.all(p >= ctrl.min(axis=0) - 1e-12)
        assert np.all(p <= ctrl.max(axis=0) + 1e-12)


class TestDecodeEncode:
    def test_param_count(self):
        assert PARAM_COUNT == 3 + N_PATHS * PARAMS_PER_PATH == 105

    def test_coordinate_expansion(self):
        v = np.full(PARAM_COUNT, 0.5)
        scene = decode_scene(v)
        assert np.allclose(scene.canvas_color, 0.5)
        for p in scene.paths:
            assert np.allclose(p.points, 0.5)          # 2*0.5 - 0.5
            assert p.stroke_width == pytest.approx(MAX_STROKE_WIDTH / 2)
        v0 = np.zeros(PARAM_COUNT)
        assert np.allclose(decode_scene(v0).paths[0].points, -0.5)
        v1 = np.ones(PARAM_COUNT)
        assert np.allclose(decode_scene(v1).paths[0].points, 1.5)

    def test_roundtrip(self, rng):
        v = rng.random(PARAM_COUNT)
        assert np.allclose(encode_scene(decode_scene(v)), v)

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            decode_scene(np.zeros(PARAM_COUNT - 1))

    def test_random_scene_valid(self, rng):
        scene = random_scene(rng)
        assert len(scene.paths) == N_PATHS
        for p in scene.paths:
            assert 0 <= p.stroke_width <= MAX_STROKE_WIDTH


class TestValidation:
    def test_fill_range_checked(self):
        with pytest.raises(ValueError):
            CubicBezierPath(points=np.zeros((13, 2)), fill=[0, 0, 0, 1.5],
                            stroke_color=[0, 0, 0], stroke_width=1.0)

    def test_stroke_width_range_checked(self):
        with pytest.raises(ValueError):
            CubicBezierPath(points=np.zeros((13, 2)), fill=[0, 0, 0, 1],
                            stroke_color=[0, 0, 0],
                            stroke_width=MAX_STROKE_WIDTH + 1)

    def test_point_count_checked(self):
        with pytest.raises(ValueError):
            CubicBezierPath(points=np.zeros((12, 2)), fill=[0, 0, 0, 1],
                            stroke_color=[0, 0, 0], stroke_width=1.0)

    def test_scene_needs_three_paths(self):
        with pytest.raises(ValueError):
            Scene(canvas_color=np.zeros(3), paths=[])


def test_dict_roundtrip(rng):
    scene = random_scene(rng)
    back = scene_from_dict(scene_to_dict(scene))
    assert np.allclose(back.canvas_color, scene.canvas_color)
    for a, b in zip(back.paths, scene.paths):
        assert np.allclose(a.points, b.points)
        assert np.allclose(a.fill, b.fill)
        assert np.allclose(a.stroke_color, b.stroke_color)
        assert a.stroke_width == pytest.approx(b.stroke_width)


def test_segment_slicing(rng):
    scene = random_scene(rng)
    path = scene.paths[0]
    for i in range(4):
        assert np.array_equal(path.segment(i), path.points[3 * i: 3 * i + 4])
    # consecutive segments share an endpoint
    assert np.array_equal(path.segment(0)[3], path.segment(1)[0])
