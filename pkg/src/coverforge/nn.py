"""Layers, optimizer and checkpointing for the cover-generation networks.

Everything is built on the autodiff engine in :mod:`coverforge.autodiff`;
composite layers (normalizations, convolution) are expressed through the
engine's primitives so second-order gradients (needed by the critic's
gradient penalty) come for free.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class Module:
    """Base class: parameter registry plus train/eval mode propagation."""

    def __init__(self):
        self._params = {}
        self._modules = {}
        self.training = True

    def add_param(self, name, array):
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def add_module(self, name, module):
        self._modules[name] = module
        return module

    def parameters(self, prefix=""):
        out = {}
        for name, p in self._params.items():
            out[prefix + name] = p
        for name, m in self._modules.items():
            out.update(m.parameters(prefix + name + "."))
        return out

    def buffers(self, prefix=""):
        out = {}
        for name, m in self._modules.items():
            out.update(m.buffers(prefix + name + "."))
        return out

    def train(self, mode=True):
        self.training = mode
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        scale = np.sqrt(2.0 / in_features)
        self.w = self.add_param("w", rng.normal(0, scale, (out_features, in_features)))
        self.b = self.add_param("b", np.zeros(out_features))

    def forward(self, x):
        if x.shape[-1] != self.w.shape[1]:
            raise ValueError(f"linear expects {self.w.shape[1]} features, got {x.shape[-1]}")
        return x @ self.w.T + self.b


class Conv2d(Module):
    """Stride-s valid/padded cross-correlation via im2col."""

    def __init__(self, in_channels, out_channels, kernel_size, stride, padding, rng):
        super().__init__()
        self.cin, self.cout = in_channels, out_channels
        self.k, self.stride, self.pad = kernel_size, stride, padding
        fan_in = in_channels * kernel_size * kernel_size
        self.w = self.add_param("w", rng.normal(0, np.sqrt(2.0 / fan_in), (out_channels, fan_in)))
        self.b = self.add_param("b", np.zeros(out_channels))
        self._index_cache = {}

    def _index(self, h, w):
        key = (h, w)
        if key not in self._index_cache:
            self._index_cache[key] = ad.ConvIndex(self.cin, h, w, self.k, self.stride, self.pad)
        return self._index_cache[key]

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.cin:
            raise ValueError(f"conv expects {self.cin} channels, got {c}")
        ci = self._index(h, w)
        cols = ad.im2col(x, ci)                       # [B, cin*k*k, L]
        y = self.w @ cols                             # [B, cout, L]
        y = y + self.b.reshape(1, self.cout, 1)
        return y.reshape((b, self.cout, ci.oh, ci.ow))


class BatchNorm1d(Module):
    def __init__(self, features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones(features))
        self.beta = self.add_param("beta", np.zeros(features))
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def buffers(self, prefix=""):
        return {prefix + "running_mean": self.running_mean,
                prefix + "running_var": self.running_var}

    def forward(self, x):
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batch norm needs batch size >= 2 in training mode")
            mu = x.mean(axis=0, keepdims=True)
            var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data[0]
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var.data[0]
        else:
            mu = Tensor(self.running_mean[None])
            var = Tensor(self.running_var[None])
        xhat = (x - mu) / ad.sqrt(var + self.eps)
        return xhat * self.gamma + self.beta


class BatchNorm2d(Module):
    """Per-channel batch norm over (B, H, W)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.add_param("gamma", np.ones((1, channels, 1, 1)))
        self.beta = self.add_param("beta", np.zeros((1, channels, 1, 1)))
        self.running_mean = np.zeros((1, channels, 1, 1))
        self.running_var = np.ones((1, channels, 1, 1))

    def buffers(self, prefix=""):
        return {prefix + "running_mean": self.running_mean,
                prefix + "running_var": self.running_var}

    def forward(self, x):
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("batch norm needs batch size >= 2 in training mode")
            mu = x.mean(axis=(0, 2, 3), keepdims=True)
            var = ((x - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.data
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var.data
        else:
            mu = Tensor(self.running_mean)
            var = Tensor(self.running_var)
        xhat = (x - mu) / ad.sqrt(var + self.eps)
        return xhat * self.gamma + self.beta


class LayerNorm(Module):
    """Normalizes each sample over all non-batch axes."""

    def __init__(self, eps=1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        axes = tuple(range(1, x.ndim))
        mu = x.mean(axis=axes, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
        return (x - mu) / ad.sqrt(var + self.eps)


class Dropout(Module):
    def __init__(self, p=0.2):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(0)

    def seed(self, rng):
        self.rng = rng

    def forward(self, x):
        if not self.training or self.p == 0:
            return x
        keep = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * Tensor(keep)


def leaky_relu(x, slope):
    return ad.leaky_relu(x, slope)


def sigmoid(x):
    return ad.sigmoid(x)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1 ** t)
            vhat = self.v[k] / (1 - self.beta2 ** t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, prefix="adam."):
        out = {prefix + "step": np.array([self.step_count], dtype=np.float64)}
        for k in self.params:
            out[prefix + "m." + k] = self.m[k]
            out[prefix + "v." + k] = self.v[k]
        return out

    def load_state_arrays(self, arrays, prefix="adam."):
        self.step_count = int(arrays[prefix + "step"][0])
        for k in self.params:
            self.m[k] = np.array(arrays[prefix + "m." + k])
            self.v[k] = np.array(arrays[prefix + "v." + k])


def gradient_penalty(critic, real, fake, lam, rng):
    """WGAN-GP term on uniform interpolations between real and fake batches.

    ``critic`` maps an image-batch tensor to per-item scores; conditioning
    is expected to be closed over by the caller. Differentiable in the
    critic's parameters (double backward through the input gradient).
    """
    if real.shape != fake.shape:
        raise ValueError("real and fake batches must have equal shapes")
    if lam == 0:
        return Tensor(0.0)
    b = real.shape[0]
    eps_shape = (b,) + (1,) * (real.ndim - 1)
    eps = rng.random(eps_shape)
    x_hat = Tensor(eps * real.data + (1 - eps) * fake.data, requires_grad=True)
    scores = critic(x_hat)
    total = scores.sum()
    g = ad.grad(total, x_hat, create_graph=True)
    axes = tuple(range(1, real.ndim))
    norm = ad.sqrt((g * g).sum(axis=axes) + 1e-12)
    return lam * ((norm - 1.0) ** 2).mean()


def save_checkpoint(path, modules, optimizers=None, meta=None):
    """Write named parameter/buffer arrays plus optimizer state as .npz."""
    arrays = {"__version__": np.array([CHECKPOINT_VERSION], dtype=np.float64)}
    for name, module in modules.items():
        for k, p in module.parameters(name + ".").items():
            arrays["param." + k] = p.data
        for k, buf in module.buffers(name + ".").items():
            arrays["buffer." + k] = buf
    for name, opt in (optimizers or {}).items():
        arrays.update(opt.state_arrays(f"opt.{name}."))
    if meta:
        for k, v in meta.items():
            arrays["meta." + k] = np.asarray(v, dtype=np.float64)
    np.savez(path, **arrays)


def load_checkpoint(path, modules, optimizers=None):
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    version = int(arrays.pop("__version__")[0])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    for name, module in modules.items():
        for k, p in module.parameters(name + ".").items():
            p.data = np.array(arrays["param." + k])
        for k, buf in module.buffers(name + ".").items():
            buf[...] = arrays["buffer." + k]
    for name, opt in (optimizers or {}).items():
        opt.load_state_arrays(arrays, f"opt.{name}.")
    return {k[len("meta."):]: arrays[k] for k in arrays if k.startswith("meta.")}
