"""Caption stack: edges, box geometry, font fitting, layout network."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coverforge.caption import Box, canny, giou
from coverforge.caption.fonts import MIN_FONT_SIZE, FontMetrics, fit_font_size
from coverforge.caption.model import (CaptionNet, caption_forward,
                                      output_to_layout, prepare_input,
                                      synthetic_layout_dataset)


class TestCanny:
    def test_blank_image_no_edges(self):
        assert not canny(np.full((32, 32), 0.7)).any()

    def test_vertical_step_edge(self):
        img = np.zeros((32, 32))
        img[:, 16:] = 1.0
        edges = canny(img)
        # edge response confined to a thin band around column 16
        cols = np.nonzero(edges.any(axis=0))[0]
        assert len(cols) > 0
        assert np.all(np.abs(cols - 15.5) <= 3)
        assert edges[:, cols].sum() >= 20

    def test_gain_and_offset_invariance(self):
        rng = np.random.default_rng(0)
        img = rng.random((24, 24))
        base = canny(img)
        assert np.array_equal(canny(0.5 * img + 0.2), base)

    def test_hysteresis_keeps_connected_weak_edges(self):
        # a ramp edge whose gradient varies along its length stays connected
        img = np.zeros((40, 40))
        strength = np.linspace(1.0, 0.35, 40)
        img[:, 20:] = strength[:, None]
        edges = canny(img)
        rows_with_edge = edges.any(axis=1)
        assert rows_with_edge.sum() >= 35

    def test_rejects_multichannel(self):
        with pytest.raises(ValueError):
            canny(np.zeros((8, 8, 3)))


class TestGiou:
    def test_identity_is_one(self):
        box = Box(0.1, 0.2, 0.5, 0.8)
        assert giou(box, box) == 1.0

    def test_touching_boxes_zero(self):
        a = Box(0.0, 0.0, 1.0, 1.0)
        b = Box(1.0, 0.0, 2.0, 1.0)
        assert giou(a, b) == 0.0

    def test_separated_boxes_minus_third(self):
        a = Box(0.0, 0.0, 1.0, 1.0)
        b = Box(2.0, 0.0, 3.0, 1.0)
        assert giou(a, b) == pytest.approx(-1.0 / 3.0, abs=1e-12)

    def test_symmetry(self, rng):
        for _ in range(20):
            x = rng.random(8)
            a = Box.canonical(x[0], x[1], x[0] + x[2], x[1] + x[3])
            b = Box.canonical(x[4], x[5], x[4] + x[6], x[5] + x[7])
            assert giou(a, b) == pytest.approx(giou(b, a), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_range_and_iou_bound(self, seed):
        r = np.random.default_rng(seed).random(8)
        a = Box.canonical(r[0], r[1], r[0] + r[2] + 0.01, r[1] + r[3] + 0.01)
        b = Box.canonical(r[4], r[5], r[4] + r[6] + 0.01, r[5] + r[7] + 0.01)
        g = giou(a, b)
        assert -1.0 <= g <= 1.0

    def test_canonical_swaps_corners(self):
        box = Box.canonical(0.8, 0.9, 0.2, 0.3)
        assert (box.x0, box.y0, box.x1, box.y1) == (0.2, 0.3, 0.8, 0.9)
        assert box.area == pytest.approx(0.6 * 0.6)


class TestFonts:
    def test_height_limited(self):
        box = Box(0.0, 0.0, 1.0, 0.12)       # 15.36 px tall at 128
        size, overflow = fit_font_size(box, "ab", canvas_size=128)
        assert not overflow
        assert size == pytest.approx(15.36 / 1.2)

    def test_width_limited_long_text(self):
        box = Box(0.0, 0.0, 0.5, 0.5)
        text = "a" * 12
        size, overflow = fit_font_size(box, text, canvas_size=128)
        assert not overflow
        assert size == pytest.approx(64.0 / (0.6 * 12))

    def test_overflow_floors_at_minimum(self):
        box = Box(0.0, 0.0, 0.05, 0.05)
        size, overflow = fit_font_size(box, "a very long caption indeed",
                                       canvas_size=128)
        assert overflow
        assert size == MIN_FONT_SIZE

    def test_empty_text_uses_height(self):
        box = Box(0.0, 0.0, 0.2, 0.3)
        size, overflow = fit_font_size(box, "", canvas_size=128)
        assert size == pytest.approx(0.3 * 128 / 1.2)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            fit_font_size(Box(0.5, 0.5, 0.5, 0.9), "x")

    def test_custom_metrics(self):
        box = Box(0.0, 0.0, 1.0, 0.5)
        metrics = FontMetrics(advance_ratio=1.0, line_height_ratio=2.0)
        size, _ = fit_font_size(box, "abcd", metrics, canvas_size=100)
        assert size == pytest.approx(min(50 / 2.0, 100 / 4.0))


class TestCaptionNet:
    def test_forward_shape_and_range(self, rng):
        net = CaptionNet(rng, input_size=64)
        x = rng.random((2, 4, 64, 64))
        out = net(__import__("coverforge.autodiff", fromlist=["Tensor"]).Tensor(x))
        assert out.shape == (2, 14)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_input_shape_checked(self, rng):
        net = CaptionNet(rng, input_size=64)
        from coverforge.autodiff import Tensor
        with pytest.raises(ValueError):
            net(Tensor(np.zeros((1, 3, 64, 64))))

    def test_prepare_input_adds_edge_channel(self, rng):
        img = rng.random((32, 32, 3))
        x = prepare_input(img)
        assert x.shape == (4, 32, 32)
        assert np.allclose(x[:3], img.transpose(2, 0, 1))
        assert set(np.unique(x[3])) <= {0.0, 1.0}

    def test_output_to_layout_canonicalizes(self):
        vec = np.array([0.8, 0.7, 0.2, 0.1,      # flipped artist corners
                        0.1, 0.2, 0.6, 0.4,
                        0.5, 0.5, 0.5, 0.9, 0.9, 0.9])
        layout = output_to_layout(vec)
        assert layout.artist_box.x0 <= layout.artist_box.x1
        assert layout.artist_box.y0 <= layout.artist_box.y1
        assert np.allclose(layout.artist_color, 0.5)
        assert np.allclose(layout.title_color, 0.9)

    def test_caption_forward_deterministic_and_restores_mode(self, rng):
        net = CaptionNet(rng, input_size=64)
        img = rng.random((64, 64, 3))
        x = prepare_input(img)
        a = caption_forward(net, x)
        b = caption_forward(net, x)
        assert net.training
        assert a.artist_box.as_tuple() == b.artist_box.as_tuple()
        assert np.array_equal(a.artist_color, b.artist_color)


class TestSyntheticDataset:
    def test_shapes_and_ranges(self, rng):
        inputs, targets = synthetic_layout_dataset(4, rng, size=64)
        assert inputs.shape == (4, 4, 64, 64)
        assert targets.shape == (4, 14)
        assert targets.min() >= 0.0 and targets.max() <= 1.0

    def test_boxes_are_proper(self, rng):
        _, targets = synthetic_layout_dataset(6, rng, size=64)
        for t in targets:
            assert t[2] > t[0] and t[3] > t[1]
            assert t[6] > t[4] and t[7] > t[5]

    def test_colors_complement_background(self, rng):
        inputs, targets = synthetic_layout_dataset(3, rng, size=64)
        for x, t in zip(inputs, targets):
            bg = x[:3, 0, 0]                  # top-left corner is background
            assert np.allclose(t[8:11], 1.0 - bg)
