"""Conditional WGAN-GP over Bezier scene parameters.

The generator maps (noise, audio embedding, emotion one-hot) to the 105
scene parameters; the critic scores Gaussian-blurred covers together with
the same conditions. Training follows Wasserstein loss with gradient
penalty plus the cyclic-shift secondary loss on the critic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .audio.condition import N_EMOTIONS
from .raster import DEFAULT_SOFTNESS, gaussian_blur, gaussian_blur_t
from .raster import _backward_from_cache, _render_cached
from .scene import PARAM_COUNT, Scene, decode_scene

BLUR_SIGMA = 1.0
GP_LAMBDA = 10.0
SECONDARY_WEIGHT = 1.0


@dataclass
class GeneratorConfig:
    noise_dim: int = 32
    embedding_dim: int = 55
    hidden: tuple = (256, 512, 512, 256)
    out_dim: int = PARAM_COUNT

    @property
    def input_dim(self):
        return self.noise_dim + self.embedding_dim + N_EMOTIONS


class Generator(nn.Module):
    """5 fully-connected layers; LeakyReLU(0.2)+batch norm on 1-4, sigmoid last."""

    def __init__(self, config: GeneratorConfig, rng):
        super().__init__()
        self.config = config
        dims = [config.input_dim, *config.hidden, config.out_dim]
        self.layers = []
        self.norms = []
        for i in range(5):
            self.layers.append(self.add_module(f"fc{i}", nn.Linear(dims[i], dims[i + 1], rng)))
            if i < 4:
                self.norms.append(self.add_module(f"bn{i}", nn.BatchNorm1d(dims[i + 1])))

    def forward(self, noise, a, e):
        x = ad.concat([noise, a, e], axis=1)
        if x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected input dim {self.config.input_dim}, got {x.shape[1]}")
        for i in range(4):
            x = nn.leaky_relu(self.layers[i](x), 0.2)
            x = self.norms[i](x)
        return nn.sigmoid(self.layers[4](x))


class Discriminator(nn.Module):
    """Conditioned critic: 3 convs (24,48,48 ch) then 2 FC layers, no final act."""

    def __init__(self, image_size, embedding_dim, rng, fc_width=64, dropout=0.2):
        super().__init__()
        self.image_size = image_size
        chans = [3, 24, 48, 48]
        self.convs, self.lnorms, self.drops = [], [], []
        for i in range(3):
            self.convs.append(self.add_module(
                f"conv{i}", nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1, rng=rng)))
            self.lnorms.append(self.add_module(f"ln{i}", nn.LayerNorm()))
            self.drops.append(self.add_module(f"drop{i}", nn.Dropout(dropout)))
        side = image_size
        for _ in range(3):
            side = (side + 1) // 2
        flat = 48 * side * side
        self.fc1 = self.add_module(
            "fc1", nn.Linear(flat + embedding_dim + N_EMOTIONS, fc_width, rng))
        # second FC is 64x narrower than the first, i.e. the single score
        self.fc2 = self.add_module("fc2", nn.Linear(fc_width, max(1, fc_width // 64), rng))

    def seed_dropout(self, rng):
        for d in self.drops:
            d.seed(rng)

    def forward(self, images, a, e):
        x = images
        for conv, ln, drop in zip(self.convs, self.lnorms, self.drops):
            x = drop(ln(nn.leaky_relu(conv(x), 0.1)))
        x = x.reshape((x.shape[0], -1))
        x = ad.concat([x, a, e], axis=1)
        x = nn.leaky_relu(self.fc1(x), 0.2)
        return self.fc2(x)


def render_scene_batch(params, size, *, softness=DEFAULT_SOFTNESS, spp=None):
    """Differentiable bridge: [B,105] parameter tensor -> [B,3,H,W] images.

    Forward decodes and rasterizes each row; backward routes image
    gradients through the rasterizer and the decode affine maps.
    """
    from .raster import SAMPLES_PER_SEGMENT
    from .scene import MAX_STROKE_WIDTH
    spp = spp or SAMPLES_PER_SEGMENT
    params = ad.as_tensor(params)
    scenes, caches, imgs = [], [], []
    for row in params.data:
        scene = decode_scene(row)
        img, cache = _render_cached(scene, size, softness, spp)
        scenes.append(scene)
        caches.append(cache)
        imgs.append(img.transpose(2, 0, 1))
    data = np.stack(imgs)

    def backward(g):
        gd = g.data
        dv = np.zeros_like(params.data)
        for i, (scene, cache) in enumerate(zip(scenes, caches)):
            sg = _backward_from_cache(scene, size, softness, spp, cache,
                                      gd[i].transpose(1, 2, 0))
            dv[i, :3] = sg.canvas_color
            for p in range(3):
                o = 3 + p * 34
                dv[i, o: o + 26] = 2.0 * sg.points[p].reshape(-1)
                dv[i, o + 26] = sg.stroke_width[p] * MAX_STROKE_WIDTH
                dv[i, o + 27: o + 31] = sg.fill[p]
                dv[i, o + 31: o + 34] = sg.stroke_color[p]
        return (Tensor(dv),)

    if params.requires_grad:
        return Tensor(data, requires_grad=True, _parents=(params,), _backward=backward)
    return Tensor(data)


def cyclic_shift(batch, k):
    """output[i] = input[(i+k) mod B]; rejects shifts with fixed points."""
    arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    b = arr.shape[0]
    if not 1 <= k <= b - 1:
        raise ValueError(f"shift k must satisfy 1 <= k <= {b - 1}")
    idx = (np.arange(b) + k) % b
    if isinstance(batch, Tensor):
        return ad.take(batch, idx)
    return arr[idx]


def secondary_loss(critic, real_images, a, e, k, rng=None):
    """Mean critic score on cyclically mismatched covers minus matched ones.

    Both passes share the same dropout masks so the difference isolates
    the cover/condition mismatch (and is exactly 0 for identical covers).
    """
    seed = int(rng.integers(2 ** 31)) if rng is not None else 0
    shifted = cyclic_shift(real_images, k)
    if hasattr(critic, "seed_dropout"):
        critic.seed_dropout(np.random.default_rng(seed))
    mismatched = critic(shifted, a, e).mean()
    if hasattr(critic, "seed_dropout"):
        critic.seed_dropout(np.random.default_rng(seed))
    matched = critic(real_images, a, e).mean()
    return mismatched - matched


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    critic_steps: int = 5
    gp_lambda: float = GP_LAMBDA
    secondary_weight: float = SECONDARY_WEIGHT
    blur_sigma: float = BLUR_SIGMA
    canvas_size: int = 128
    seed: int = 0
    spp: int | None = None


@dataclass
class StepReport:
    wasserstein: float
    gp: float
    secondary: float
    g_loss: float

    def finite(self):
        return all(np.isfinite([self.wasserstein, self.gp, self.secondary, self.g_loss]))


def train_step(g_model, d_model, batch, cfg: TrainConfig, g_opt, d_opt, rng) -> StepReport:
    """One WGAN-GP step: ``critic_steps`` critic updates then one generator update."""
    r, a_np, e_np = batch
    b = r.shape[0]
    a, e = Tensor(a_np), Tensor(e_np)
    real_blur = Tensor(gaussian_blur(r, cfg.blur_sigma))

    w_val = gp_val = l2_val = 0.0
    for _ in range(cfg.critic_steps):
        noise = Tensor(rng.standard_normal((b, g_model.config.noise_dim)))
        fake_params = g_model(noise, a, e).detach()
        fake_imgs = render_scene_batch(fake_params, cfg.canvas_size, spp=cfg.spp)
        fake_blur = gaussian_blur_t(fake_imgs, cfg.blur_sigma).detach()

        d_fake = d_model(fake_blur, a, e).mean()
        d_real = d_model(real_blur, a, e).mean()
        wasserstein = d_fake - d_real
        gp = nn.gradient_penalty(
            lambda x: d_model(x, a, e), real_blur, fake_blur, cfg.gp_lambda, rng)
        k = int(rng.integers(1, b)) if b > 1 else None
        l2 = (secondary_loss(d_model, real_blur, a, e, k, rng) if k is not None
              else Tensor(0.0))
        loss = wasserstein + gp + cfg.secondary_weight * l2
        if not np.isfinite(loss.data):
            raise FloatingPointError(
                f"non-finite critic loss (w={wasserstein.data}, gp={gp.data}, l2={l2.data})")
        d_opt.zero_grad()
        loss.backward()
        d_opt.step()
        w_val, gp_val, l2_val = float(wasserstein.data), float(gp.data), float(l2.data)

    noise = Tensor(rng.standard_normal((b, g_model.config.noise_dim)))
    fake_params = g_model(noise, a, e)
    fake_imgs = render_scene_batch(fake_params, cfg.canvas_size, spp=cfg.spp)
    fake_blur = gaussian_blur_t(fake_imgs, cfg.blur_sigma)
    g_loss = -d_model(fake_blur, a, e).mean()
    if not np.isfinite(g_loss.data):
        raise FloatingPointError(f"non-finite generator loss {g_loss.data}")
    g_opt.zero_grad()
    d_model.zero_grad()
    g_loss.backward()
    g_opt.step()
    return StepReport(w_val, gp_val, l2_val, float(g_loss.data))


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    g_opt: nn.Adam
    d_opt: nn.Adam
    history: list = field(default_factory=list)


def build_models(cfg: TrainConfig, embedding_dim, rng) -> TrainState:
    gen_cfg = GeneratorConfig(embedding_dim=embedding_dim)
    g_model = Generator(gen_cfg, rng)
    d_model = Discriminator(cfg.canvas_size, embedding_dim, rng)
    d_model.seed_dropout(np.random.default_rng(rng.integers(2 ** 31)))
    g_opt = nn.Adam(g_model.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    d_opt = nn.Adam(d_model.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    return TrainState(g_model, d_model, g_opt, d_opt)


def train(dataset, cfg: TrainConfig, state: TrainState | None = None,
          log_path=None, progress=None) -> TrainState:
    """Train on (images [N,3,H,W], embeddings [N,d], emotions [N,19])."""
    images, embeds, emotions = dataset
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = build_models(cfg, embeds.shape[1], rng)
    n = images.shape[0]
    writer = None
    log_file = None
    if log_path:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "wasserstein", "gp", "l2", "g_loss"])
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for s in range(0, n, cfg.batch_size):
                sel = order[s: s + cfg.batch_size]
                if len(sel) < 2:
                    continue
                report = train_step(
                    state.generator, state.discriminator,
                    (images[sel], embeds[sel], emotions[sel]),
                    cfg, state.g_opt, state.d_opt, rng)
                state.history.append(report)
                if writer:
                    writer.writerow([epoch, report.wasserstein, report.gp,
                                     report.secondary, report.g_loss])
            if progress:
                progress(epoch, state.history[-1] if state.history else None)
    finally:
        if log_file:
            log_file.close()
    return state


def generate_cover(g_model: Generator, condition, seed) -> Scene:
    """Deterministic scene for a (condition, seed) pair."""
    rng = np.random.default_rng(seed)
    noise = Tensor(rng.standard_normal((1, g_model.config.noise_dim)))
    a = Tensor(condition.audio_embedding[None])
    e = Tensor(condition.emotion_onehot[None])
    was_training = g_model.training
    g_model.eval()
    params = g_model(noise, a, e).data[0]
    g_model.train(was_training)
    return decode_scene(params)
