"""Reverse-mode automatic differentiation on numpy arrays.

The engine is define-by-run: every operation records its parents and a
backward closure. Backward closures are themselves written in terms of
Tensor operations, so gradients are ordinary graph nodes and can be
differentiated again (needed for the gradient-penalty term, which
backpropagates through the critic's input gradient).

Only the operations the networks in this project require are provided;
this is not a general framework.
"""

from __future__ import annotations

import numpy as np

# When True, every op asserts its output is finite. Slow; meant for tests.
nan_guard = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        if nan_guard and not np.all(np.isfinite(self.data)):
            raise FloatingPointError("non-finite values in tensor")

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    # -- shape ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def backward(self, grad_output=None):
        """Accumulate gradients into ``.grad`` of every reachable leaf."""
        grads = _backprop(self, grad_output, create_graph=False)
        for node, g in grads.items():
            if node._backward is None and node.requires_grad:
                node.grad = g.data if node.grad is None else node.grad + g.data


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- backward engine ------------------------------------------------------

def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def _backprop(output, grad_output, create_graph):
    if not output.requires_grad:
        raise ValueError("output does not require grad")
    if grad_output is None:
        grad_output = Tensor(np.ones_like(output.data))
    grads = {output: as_tensor(grad_output)}
    for node in reversed(_toposort(output)):
        g = grads.get(node)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if not create_graph:
                pg = pg.detach()
            grads[p] = pg if p not in grads else grads[p] + pg
    return grads


def grad(output, inputs, grad_output=None, create_graph=False):
    """Gradients of a tensor w.r.t. ``inputs``, optionally as graph nodes."""
    single = isinstance(inputs, Tensor)
    if single:
        inputs = [inputs]
    grads = _backprop(output, grad_output, create_graph)
    out = []
    for t in inputs:
        g = grads.get(t)
        if g is None:
            g = Tensor(np.zeros_like(t.data))
        out.append(g)
    return out[0] if single else out


# -- primitives -----------------------------------------------------------

def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return reshape(g, shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b, a.shape),
                            _unbroadcast(neg(g * a / (b * b)), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (neg(g),))


def pow_const(a, p):
    a = as_tensor(a)
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * (p * pow_const(a, p - 1.0)),))


def exp(a):
    a = as_tensor(a)
    out = _make(np.exp(a.data), (a,), None)
    if out.requires_grad:
        out._backward = lambda g: (g * out,)
    return out


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a,))


def sqrt(a):
    a = as_tensor(a)
    out = _make(np.sqrt(a.data), (a,), None)
    if out.requires_grad:
        out._backward = lambda g: (g * (0.5 / out),)
    return out


def tabs(a):
    a = as_tensor(a)
    sign = Tensor(np.sign(a.data))
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def sigmoid(a):
    a = as_tensor(a)
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(y, (a,), None)
    if out.requires_grad:
        out._backward = lambda g: (g * out * (1.0 - out),)
    return out


def leaky_relu(a, slope):
    a = as_tensor(a)
    mask = Tensor(np.where(a.data >= 0, 1.0, slope))
    return _make(np.where(a.data >= 0, a.data, slope * a.data), (a,),
                 lambda g: (g * mask,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        da = matmul(g, _swap_last(b))
        db = matmul(_swap_last(a), g)
        return (_unbroadcast_matmul(da, a.shape), _unbroadcast_matmul(db, b.shape))

    return _make(np.matmul(a.data, b.data), (a, b), backward)


def _swap_last(t):
    axes = list(range(t.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(t, tuple(axes))


def _unbroadcast_matmul(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    return reshape(g, shape)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        axis_t = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axis_t = (axis % a.ndim,)
    else:
        axis_t = tuple(ax % a.ndim for ax in axis)

    def backward(g):
        if not keepdims:
            kshape = tuple(1 if i in axis_t else s for i, s in enumerate(a.shape))
            g = reshape(g, kshape)
        return (broadcast_to(g, a.shape),)

    return _make(np.sum(a.data, axis=axis_t, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, int):
        n = a.shape[axis]
    else:
        n = int(np.prod([a.shape[ax] for ax in axis]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _make(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, a.shape),))


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (reshape(g, a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (transpose(g, inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        outs = []
        for i, t in enumerate(tensors):
            key = [slice(None)] * g.ndim
            key[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(take(g, tuple(key)))
        return tuple(outs)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take(a, key):
    """Indexing; backward scatter-adds into the source shape."""
    a = as_tensor(a)
    return _make(a.data[key], (a,), lambda g: (put_at(g, key, a.shape),))


def put_at(g, key, shape):
    """Adjoint of ``take``: scatter-add ``g`` at ``key`` into zeros(shape)."""
    g = as_tensor(g)

    def forward(gd):
        out = np.zeros(shape)
        np.add.at(out, key, gd)
        return out

    return _make(forward(g.data), (g,), lambda gg: (take(gg, key),))


# -- convolution indexing (gather-based, so double backward stays fast) ----

class ConvIndex:
    """Precomputed gather indices for im2col and its adjoint.

    Works on the flattened (C*H*W) image with one extra sentinel slot that
    always holds zero; out-of-bounds (padding) window positions point there.
    """

    def __init__(self, c, h, w, k, stride, pad):
        self.c, self.h, self.w, self.k, self.stride, self.pad = c, h, w, k, stride, pad
        self.oh = (h + 2 * pad - k) // stride + 1
        self.ow = (w + 2 * pad - k) // stride + 1
        n = c * h * w
        sentinel = n
        ky, kx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
        oy, ox = np.meshgrid(np.arange(self.oh), np.arange(self.ow), indexing="ij")
        iy = oy.reshape(-1, 1) * stride + ky.reshape(1, -1) - pad   # [L, k*k]
        ix = ox.reshape(-1, 1) * stride + kx.reshape(1, -1) - pad
        valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        base = np.where(valid, iy * w + ix, -1)                     # [L, k*k]
        chan = np.arange(c).reshape(-1, 1, 1) * (h * w)
        idx = np.where(base[None] >= 0, chan + np.maximum(base[None], 0), sentinel)
        # cols layout: [C*k*k, L]
        self.idx = idx.transpose(0, 2, 1).reshape(c * k * k, -1)
        self.n_cols = self.idx.size
        # inverse map: for every input cell, which flat col entries read it
        flat = self.idx.reshape(-1)
        order = np.argsort(flat, kind="stable")
        sorted_flat = flat[order]
        counts = np.bincount(sorted_flat, minlength=n + 1)[:n]
        rmax = int(counts.max()) if counts.size else 0
        inv = np.full((n, rmax), self.n_cols, dtype=np.int64)  # sentinel col slot
        starts = np.concatenate([[0], np.cumsum(counts)])
        for cell in range(n):   # built once per geometry, cached by Conv2d
            s, e = starts[cell], starts[cell + 1]
            inv[cell, : e - s] = order[s:e]
        self.inv = inv


def im2col(x, ci: ConvIndex):
    """[B,C,H,W] -> [B, C*k*k, L] patch matrix."""
    x = as_tensor(x)
    b = x.shape[0]

    def forward(xd):
        flat = np.concatenate([xd.reshape(b, -1), np.zeros((b, 1))], axis=1)
        return flat[:, ci.idx.reshape(-1)].reshape(b, ci.idx.shape[0], ci.idx.shape[1])

    return _make(forward(x.data), (x,), lambda g: (col2im(g, ci),))


def col2im(cols, ci: ConvIndex):
    """Adjoint of im2col, via gather + sum (no scatter)."""
    cols = as_tensor(cols)
    b = cols.shape[0]

    def forward(cd):
        flat = np.concatenate([cd.reshape(b, -1), np.zeros((b, 1))], axis=1)
        return flat[:, ci.inv].sum(axis=2).reshape(b, ci.c, ci.h, ci.w)

    return _make(forward(cols.data), (cols,), lambda g: (im2col(g, ci),))
