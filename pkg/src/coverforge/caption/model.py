"""Caption layout network: boxes and text colors from a 4-channel cover.

Input is RGB plus a Canny edge channel at 256x256. A shared convolutional
trunk (alternating 3x3 and 5x5 kernels) feeds two 2-layer heads: one
regressing the 8 box coordinates, one the 6 text color channels, all
sigmoid-bounded. Training minimizes mean squared error on the 14-value
target; validation reports mean GIoU over boxes and MSE over colors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from .canny import canny
from .geometry import Box, giou

INPUT_SIZE = 256
TRUNK_CHANNELS = (8, 12, 16, 24, 32, 48)
TRUNK_KERNELS = (3, 5, 3, 5, 3, 5)
LEAK = 0.01


@dataclass
class CaptionLayout:
    artist_box: Box
    title_box: Box
    artist_color: np.ndarray
    title_color: np.ndarray

    def to_dict(self):
        return {
            "artist_box": self.artist_box.as_tuple(),
            "title_box": self.title_box.as_tuple(),
            "artist_color": self.artist_color.tolist(),
            "title_color": self.title_color.tolist(),
        }


class CaptionNet(nn.Module):
    def __init__(self, rng, input_size=INPUT_SIZE):
        super().__init__()
        self.input_size = input_size
        chans = (4, *TRUNK_CHANNELS)
        self.convs, self.norms, self.drops = [], [], []
        for i, k in enumerate(TRUNK_KERNELS):
            self.convs.append(self.add_module(
                f"conv{i}", nn.Conv2d(chans[i], chans[i + 1], k, stride=2,
                                      padding=k // 2, rng=rng)))
            self.norms.append(self.add_module(f"bn{i}", nn.BatchNorm2d(chans[i + 1])))
            self.drops.append(self.add_module(f"drop{i}", nn.Dropout(0.2)))
        side = input_size // (2 ** len(TRUNK_KERNELS))
        flat = TRUNK_CHANNELS[-1] * side * side
        self.box_fc1 = self.add_module("box_fc1", nn.Linear(flat, 128, rng))
        self.box_fc2 = self.add_module("box_fc2", nn.Linear(128, 8, rng))
        self.color_fc1 = self.add_module("color_fc1", nn.Linear(flat, 64, rng))
        self.color_fc2 = self.add_module("color_fc2", nn.Linear(64, 6, rng))

    def forward(self, x):
        if x.shape[1:] != (4, self.input_size, self.input_size):
            raise ValueError(
                f"expected [B,4,{self.input_size},{self.input_size}] input, got {x.shape}")
        for conv, bn, drop in zip(self.convs, self.norms, self.drops):
            x = drop(bn(nn.leaky_relu(conv(x), LEAK)))
        x = x.reshape((x.shape[0], -1))
        boxes = nn.sigmoid(self.box_fc2(nn.leaky_relu(self.box_fc1(x), LEAK)))
        colors = nn.sigmoid(self.color_fc2(nn.leaky_relu(self.color_fc1(x), LEAK)))
        return ad.concat([boxes, colors], axis=1)


def prepare_input(image_rgb) -> np.ndarray:
    """[H,W,3] float image -> [4,H,W] network input with Canny 4th channel."""
    img = np.asarray(image_rgb, dtype=np.float64)
    gray = img.mean(axis=2)
    edges = canny(gray).astype(np.float64)
    return np.concatenate([img.transpose(2, 0, 1), edges[None]], axis=0)


def output_to_layout(vec) -> CaptionLayout:
    """14-value network output -> canonicalized CaptionLayout."""
    v = np.asarray(vec, dtype=np.float64)
    return CaptionLayout(
        artist_box=Box.canonical(v[0], v[1], v[2], v[3]),
        title_box=Box.canonical(v[4], v[5], v[6], v[7]),
        artist_color=v[8:11].copy(),
        title_color=v[11:14].copy(),
    )


def caption_forward(model: CaptionNet, image_4ch) -> CaptionLayout:
    """Deterministic single-image inference."""
    was_training = model.training
    model.eval()
    out = model(Tensor(np.asarray(image_4ch)[None])).data[0]
    model.train(was_training)
    return output_to_layout(out)


def _validate(model, inputs, targets):
    model.eval()
    out = model(Tensor(inputs)).data
    model.train()
    gious = []
    for row, t in zip(out, targets):
        pred = output_to_layout(row)
        truth = output_to_layout(t)
        gious.append(giou(pred.artist_box, truth.artist_box))
        gious.append(giou(pred.title_box, truth.title_box))
    color_mse = float(np.mean((out[:, 8:] - targets[:, 8:]) ** 2))
    return float(np.mean(gious)), color_mse


@dataclass
class CaptionTrainResult:
    model: CaptionNet
    giou_history: list = field(default_factory=list)
    color_mse_history: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)


def caption_train(inputs, targets, *, epochs=138, lr=1e-3, batch_size=64,
                  seed=0, progress=None) -> CaptionTrainResult:
    """MSE training with Adam (beta1=0.5), GIoU/color-MSE validation.

    ``inputs`` is [N,4,H,W]; ``targets`` is [N,14] in normalized coords.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    model = CaptionNet(rng, input_size=inputs.shape[2])
    for d in model.drops:
        d.seed(np.random.default_rng(seed + 1))
    opt = nn.Adam(model.parameters(), lr, beta1=0.5, beta2=0.999)
    result = CaptionTrainResult(model)
    n = len(inputs)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for s in range(0, n, batch_size):
            sel = order[s: s + batch_size]
            if len(sel) < 2:
                continue
            out = model(Tensor(inputs[sel]))
            loss = ((out - Tensor(targets[sel])) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data) * len(sel)
        g, cmse = _validate(model, inputs, targets)
        result.loss_history.append(epoch_loss / n)
        result.giou_history.append(g)
        result.color_mse_history.append(cmse)
        if progress:
            progress(epoch, g, cmse)
    return result


def synthetic_layout_dataset(n, rng, size=INPUT_SIZE):
    """Covers with text boxes on flat regions and contrasting label colors.

    Each image is a solid background with one rectangle figure; the two
    caption boxes sit in low-edge-density areas and the label colors are
    the background complement. Returns (inputs [N,4,S,S], targets [N,14]).
    """
    inputs, targets = [], []
    for _ in range(n):
        bg = rng.random(3)
        img = np.broadcast_to(bg, (size, size, 3)).copy()
        # one decorative rectangle in the middle band
        rx0, ry0 = rng.uniform(0.15, 0.45, 2)
        rw, rh = rng.uniform(0.15, 0.35, 2)
        fg = rng.random(3)
        px = (np.array([rx0, ry0, rx0 + rw, ry0 + rh]) * size).astype(int)
        img[px[1]:px[3], px[0]:px[2]] = fg
        # caption boxes in the flat top and bottom margins
        aw, ah = rng.uniform(0.3, 0.6), rng.uniform(0.06, 0.1)
        ax0 = rng.uniform(0.05, 0.9 - aw)
        ay0 = rng.uniform(0.02, 0.08)
        tw, th = rng.uniform(0.3, 0.6), rng.uniform(0.06, 0.1)
        tx0 = rng.uniform(0.05, 0.9 - tw)
        ty0 = rng.uniform(0.85, 0.92 - th) if th < 0.07 else rng.uniform(0.85, 0.88)
        color = 1.0 - bg
        inputs.append(prepare_input(img))
        targets.append(np.concatenate([
            [ax0, ay0, ax0 + aw, ay0 + ah],
            [tx0, ty0, tx0 + tw, ty0 + th],
            color, color,
        ]))
    return np.stack(inputs), np.stack(targets)
