"""A small layer-based network engine with hand-written backward passes.

Tensors are numpy arrays laid out ``(batch, channel, x, y, z)`` for volumes
and ``(batch, features)`` after flattening. Each layer caches what it needs in
``forward`` and returns the input gradient from ``backward``, accumulating
parameter gradients in ``grads``. Convolutions use "half" padding
(``kernel // 2``) so a stride-2 layer exactly halves an even-sized input.
"""
from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DomainError, ShapeError


def conv_output_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


def _phases(xp, s):
    """Split a padded volume into its ``s**3`` contiguous stride phases."""
    for a, b, c in itertools.product(range(s), repeat=3):
        yield (a, b, c), np.ascontiguousarray(xp[:, :, a::s, b::s, c::s])


def _pad(x, p):
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x


def _check_conv(x, w):
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"expected 5D input and weights, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")


# Two strategies. Small problems build the full im2col matrix and do a single
# matmul. Large ones split a stride-s correlation into s**3 input phases, each a
# stride-1 correlation with the matching kernel sub-grid, walking the (x, y)
# taps and contracting the z taps through a sliding-window view.
_IM2COL_LIMIT = 4_000_000


def _im2col(xp, k, s, out):
    ox, oy, oz = out
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    win = win[:, :, : s * (ox - 1) + 1: s, : s * (oy - 1) + 1: s, : s * (oz - 1) + 1: s]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * ox * oy * oz, c * k ** 3)


def _col2im(dcols, padded, k, s, out, dtype):
    n, c = padded[:2]
    ox, oy, oz = out
    d = dcols.reshape(n, ox, oy, oz, c, k, k, k)
    dxp = np.zeros(padded, dtype=dtype)
    for i, j, l in itertools.product(range(k), repeat=3):
        dxp[:, :, i:i + s * (ox - 1) + 1:s, j:j + s * (oy - 1) + 1:s, l:l + s * (oz - 1) + 1:s] += \
            d[..., i, j, l].transpose(0, 4, 1, 2, 3)
    return dxp


def _use_im2col(n, c, k, out):
    return n * int(np.prod(out)) * c * k ** 3 <= _IM2COL_LIMIT


def _zwin(ph, i, j, kc, out):
    """(N, C, ox, oy, kc, oz) view of the z taps at (x, y) tap (i, j)."""
    ox, oy, oz = out
    return sliding_window_view(ph[:, :, i:i + ox, j:j + oy, :kc - 1 + oz], oz, axis=4)


def conv3d(x, w, stride: int = 1, pad: int | None = None):
    """Valid cross-correlation of a zero-padded input.

    ``x``: (N, C, X, Y, Z); ``w``: (O, C, k, k, k). Returns (N, O, X', Y', Z')
    with ``X' = (X + 2 pad - k) // stride + 1``.
    """
    _check_conv(x, w)
    k, s = w.shape[2], stride
    p = k // 2 if pad is None else pad
    n, c = x.shape[:2]
    o = w.shape[0]
    out = tuple(conv_output_size(d, k, s, p) for d in x.shape[2:])
    if min(out) < 1:
        raise ShapeError(f"input {x.shape[2:]} too small for kernel {k}")
    xp = _pad(x, p)
    if _use_im2col(n, c, k, out):
        acc = _im2col(xp, k, s, out) @ w.reshape(o, -1).T
        return acc.reshape(n, *out, o).transpose(0, 4, 1, 2, 3)
    # einsum streams the strided windows without materialising them
    acc = np.zeros((n, o, *out), dtype=np.result_type(x, w))
    for (a, b, cc), ph in _phases(xp, s):
        wp = w[:, :, a::s, b::s, cc::s]
        if 0 in wp.shape:
            continue
        kc = wp.shape[4]
        for i, j in itertools.product(range(wp.shape[2]), range(wp.shape[3])):
            acc += np.einsum("ncxykz,ock->noxyz", _zwin(ph, i, j, kc, out), wp[:, :, i, j, :], optimize=True)
    return acc


def conv3d_grads(x, w, g, stride: int = 1, pad: int | None = None, want_dx=True, want_dw=True):
    """Gradients of ``conv3d`` w.r.t. its input and weights given output grad ``g``.

    ``x`` may be a shape tuple when only the input gradient is wanted.
    """
    k, s = w.shape[2], stride
    p = k // 2 if pad is None else pad
    x_shape = x if isinstance(x, tuple) else x.shape
    n, c_in = x_shape[:2]
    o = w.shape[0]
    out = tuple(g.shape[2:])
    padded = (n, c_in, *(d + 2 * p for d in x_shape[2:]))
    dtype = np.result_type(w, g)
    gflat = g.transpose(0, 2, 3, 4, 1).reshape(-1, o)
    dw = dxp = None
    if _use_im2col(n, c_in, k, out):
        if want_dw:
            dw = (gflat.T @ _im2col(_pad(x, p), k, s, out)).reshape(w.shape).astype(dtype, copy=False)
        if want_dx:
            dxp = _col2im(gflat @ w.reshape(o, -1), padded, k, s, out, dtype)
    else:
        if want_dw:
            dw = np.zeros(w.shape, dtype=dtype)
            phases = _phases(_pad(x, p), s)
        else:
            phases = (((a, b, c), None) for a, b, c in itertools.product(range(s), repeat=3))
        if want_dx:
            dxp = np.zeros(padded, dtype=dtype)
        ox, oy, oz = out
        for (a, b, c), ph in phases:
            wp = w[:, :, a::s, b::s, c::s]
            if 0 in wp.shape:
                continue
            ka, kb, kc = wp.shape[2:]
            if want_dx:
                dph = np.zeros((n, c_in, *(len(range(q, d, s)) for q, d in zip((a, b, c), padded[2:]))),
                               dtype=dtype)
            for i, j in itertools.product(range(ka), range(kb)):
                if want_dw:
                    dw[:, :, a + s * i, b + s * j, c::s] = np.einsum("noxyz,ncxykz->ock", g, _zwin(ph, i, j, kc, out), optimize=True)
                if want_dx:
                    taps = np.einsum("noxyz,ock->nckxyz", g, wp[:, :, i, j, :], optimize=True)
                    for l in range(kc):
                        dph[:, :, i:i + ox, j:j + oy, l:l + oz] += taps[:, :, l]
            if want_dx:
                dxp[:, :, a::s, b::s, c::s] = dph
    dx = None
    if want_dx:
        dx = np.ascontiguousarray(dxp[:, :, p:p + x_shape[2], p:p + x_shape[3], p:p + x_shape[4]])
    return dx, dw


def tconv3d(y, w, stride: int = 1, pad: int | None = None, out_spatial=None):
    """Transposed convolution: the exact linear adjoint of ``conv3d``.

    ``y``: (N, O, ...); ``w``: (O, C, k, k, k) -- the same weight layout as the
    convolution it reverses. The output spatial size defaults to
    ``stride * input`` so that stride 2 doubles every axis.
    """
    if y.ndim != 5 or w.ndim != 5:
        raise ShapeError(f"expected 5D input and weights, got {y.shape}, {w.shape}")
    if y.shape[1] != w.shape[0]:
        raise ShapeError(f"input has {y.shape[1]} channels, kernel expects {w.shape[0]}")
    k = w.shape[2]
    p = k // 2 if pad is None else pad
    if out_spatial is None:
        out_spatial = tuple(stride * d for d in y.shape[2:])
    expect = tuple(conv_output_size(d, k, stride, p) for d in out_spatial)
    if expect != tuple(y.shape[2:]):
        raise ShapeError(f"output size {out_spatial} is not compatible with input {y.shape[2:]}")
    dx, _ = conv3d_grads((y.shape[0], w.shape[1], *out_spatial), w, y, stride, p, want_dw=False)
    return dx


class Layer:
    kind = "layer"
    trainable = False
    # the first layer of a network may skip its input gradient
    needs_input_grad = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def meta(self) -> tuple[int, ...]:
        return ()

    def output_shape(self, shape):
        return shape

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv3D(Layer):
    kind = "conv3d"
    trainable = True

    def __init__(self, in_ch, out_ch, kernel, stride=1, rng=None, dtype=np.float32, pad=None):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.pad = kernel // 2 if pad is None else pad
        rng = rng if rng is not None else np.random.default_rng(0)
        k3 = kernel ** 3
        self.params["w"] = glorot_uniform(rng, (out_ch, in_ch, kernel, kernel, kernel),
                                          in_ch * k3, out_ch * k3, dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    def meta(self):
        return (self.in_ch, self.out_ch, self.kernel, self.stride, self.pad)

    def output_shape(self, shape):
        c, *sp = shape
        return (self.out_ch, *(conv_output_size(d, self.kernel, self.stride, self.pad) for d in sp))

    def forward(self, x):
        self._x = x
        out = conv3d(x, self.params["w"], self.stride, self.pad)
        return out + self.params["b"].reshape(1, -1, 1, 1, 1)

    def backward(self, g):
        dx, dw = conv3d_grads(self._x, self.params["w"], g, self.stride, self.pad,
                              want_dx=self.needs_input_grad)
        self.grads["w"] += dw
        self.grads["b"] += g.sum(axis=(0, 2, 3, 4))
        return dx


class ConvTranspose3D(Layer):
    kind = "tconv3d"
    trainable = True

    def __init__(self, in_ch, out_ch, kernel, stride=1, rng=None, dtype=np.float32, pad=None):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.pad = kernel // 2 if pad is None else pad
        rng = rng if rng is not None else np.random.default_rng(0)
        k3 = kernel ** 3
        # stored in the layout of the convolution this layer is the adjoint of
        self.params["w"] = glorot_uniform(rng, (in_ch, out_ch, kernel, kernel, kernel),
                                          in_ch * k3, out_ch * k3, dtype)
        self.params["b"] = np.zeros(out_ch, dtype=dtype)
        self.zero_grad()

    def meta(self):
        return (self.in_ch, self.out_ch, self.kernel, self.stride, self.pad)

    def output_shape(self, shape):
        c, *sp = shape
        return (self.out_ch, *(self.stride * d for d in sp))

    def forward(self, x):
        self._x = x
        out = tconv3d(x, self.params["w"], self.stride, self.pad)
        return out + self.params["b"].reshape(1, -1, 1, 1, 1)

    def backward(self, g):
        w = self.params["w"]
        # forward is y = conv^T x, so dx = conv(g) and dw follows from the conv weight grad
        dx = conv3d(g, w, self.stride, self.pad) if self.needs_input_grad else None
        _, dw = conv3d_grads(g, w, self._x, self.stride, self.pad, want_dx=False)
        self.grads["w"] += dw
        self.grads["b"] += g.sum(axis=(0, 2, 3, 4))
        return dx


class Dense(Layer):
    kind = "dense"
    trainable = True

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["w"] = glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def meta(self):
        return (self.n_in, self.n_out)

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} inputs, got shape {shape}")
        return (self.n_out,)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects (N, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, g):
        self.grads["w"] += self._x.T @ g
        self.grads["b"] += g.sum(axis=0)
        return g @ self.params["w"].T


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, g):
        return g * (1 - self._y ** 2)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        self._y = 0.5 * (1 + np.tanh(0.5 * x))
        return self._y

    def backward(self, g):
        return g * self._y * (1 - self._y)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        e = np.exp(x - x.max(axis=1, keepdims=True))
        self._y = e / e.sum(axis=1, keepdims=True)
        return self._y

    def backward(self, g):
        y = self._y
        return y * (g - (g * y).sum(axis=1, keepdims=True))


LAYER_KINDS = {cls.kind: cls for cls in (Conv3D, ConvTranspose3D, Dense, Flatten, Tanh, Sigmoid, Softmax)}


class Sequential:
    """Ordered stack of layers; this is the parameter container used everywhere."""

    def __init__(self, layers, input_shape=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        if self.input_shape is not None:
            self.shape_trace()

    def shape_trace(self):
        """Per-layer output shapes (without batch axis) starting from ``input_shape``."""
        shape = self.input_shape
        trace = [shape]
        for layer in self.layers:
            if layer.kind in ("conv3d", "tconv3d") and shape[0] != layer.in_ch:
                raise ShapeError(f"{layer.kind} expects {layer.in_ch} channels, got {shape[0]}")
            shape = layer.output_shape(shape)
            trace.append(shape)
        return trace

    def forward(self, x):
        if self.input_shape is not None and tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network expects input {self.input_shape}, got {x.shape[1:]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, g, input_grad=False):
        """Backpropagate ``g``; returns the input gradient when ``input_grad``."""
        self.layers[0].needs_input_grad = input_grad
        for layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return g

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def trainable(self):
        return [layer for layer in self.layers if layer.trainable]

    def parameters(self):
        """``(layer_index, name, array)`` for every parameter tensor."""
        return [(i, name, p) for i, layer in enumerate(self.layers) for name, p in layer.params.items()]

    def n_params(self) -> int:
        return sum(p.size for _, _, p in self.parameters())

    def astype(self, dtype) -> "Sequential":
        net = self.copy()
        for layer in net.layers:
            for name in layer.params:
                layer.params[name] = layer.params[name].astype(dtype)
            layer.velocity = {}
            layer.zero_grad()
        return net

    def copy(self) -> "Sequential":
        return copy.deepcopy(self)

    def load_state(self, other: "Sequential"):
        """Copy parameter values from ``other`` (target network sync)."""
        for dst, src in zip(self.layers, other.layers):
            for name in dst.params:
                dst.params[name][...] = src.params[name]


def mse_loss(pred, target):
    """Mean over all elements; returns ``(loss, dloss/dpred)``."""
    diff = pred - target
    return float(np.mean(diff ** 2)), 2 * diff / diff.size


def class_weights(labels, n_classes: int) -> np.ndarray:
    """``1 / count`` for every class present in ``labels`` (0 for absent classes)."""
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes).astype(float)
    return np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)


def weighted_cce(probs, labels, weights, eps: float = 1e-12):
    """Batch-mean of ``-w[y] log p[y]``; returns ``(loss, dloss/dprobs)``."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=int)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ShapeError(f"probs {probs.shape} vs labels {labels.shape}")
    if np.any(probs < -1e-9) or np.any(probs > 1 + 1e-9) or not np.allclose(probs.sum(axis=1), 1, atol=1e-5):
        raise DomainError("predictions are not probability vectors")
    weights = np.asarray(weights, dtype=float)
    n = len(labels)
    rows = np.arange(n)
    p = np.clip(probs[rows, labels], eps, None)
    w = weights[labels]
    loss = float(np.mean(-w * np.log(p)))
    grad = np.zeros_like(probs)
    grad[rows, labels] = -w / p / n
    return loss, grad


@dataclass
class SGD:
    """Momentum SGD with inverse-time learning-rate decay.

    ``lr_t = lr / (1 + decay * t)``, ``v <- momentum v - lr_t g``, ``w <- w + v``
    where ``t`` counts the updates already applied.
    """

    lr: float = 0.001
    decay: float = 1e-6
    momentum: float = 0.9
    iterations: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")

    def current_lr(self) -> float:
        return self.lr / (1.0 + self.decay * self.iterations)

    def step(self, net: Sequential):
        lr_t = self.current_lr()
        for layer in net.trainable():
            for name, w in layer.params.items():
                g = layer.grads[name]
                if g.shape != w.shape:
                    raise ShapeError(f"gradient shape {g.shape} != parameter {w.shape}")
                v = layer.velocity.get(name)
                if v is None:
                    v = np.zeros_like(w)
                v = self.momentum * v - lr_t * g
                layer.velocity[name] = v.astype(w.dtype)
                w += layer.velocity[name]
        self.iterations += 1


def sgd_step(net: Sequential, opt: SGD) -> Sequential:
    opt.step(net)
    return net


def gradient_check(net: Sequential, x, rng=None, h: float = 1e-5, max_entries: int = 64) -> float:
    """Worst relative error between backprop and central differences.

    Runs at float64 on a copy of ``net``. The scalar probed is
    ``sum(net(x) * r)`` for a fixed random ``r``; up to ``max_entries`` entries
    of every parameter tensor and of the input are perturbed by
    ``h * max(1, |value|)``. The error of a tensor is
    ``|g_bp - g_fd| / max(|g_bp|, |g_fd|)`` measured in the 2-norm over the
    probed entries.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    net = net.astype(np.float64)
    x = np.array(x, dtype=np.float64)
    r = rng.standard_normal(net(x).shape)

    def f():
        return float(np.sum(net(x) * r))

    net(x)
    net.zero_grad()
    dx = net.backward(r.copy(), input_grad=True)
    tensors = [(p, layer.grads[name]) for layer in net.layers for name, p in layer.params.items()]
    tensors.append((x, dx))
    worst = 0.0
    for arr, grad in tensors:
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        idx = rng.choice(flat.size, size=min(max_entries, flat.size), replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            step = h * max(1.0, abs(old))
            flat[i] = old + step
            fp = f()
            flat[i] = old - step
            fm = f()
            flat[i] = old
            num[k] = (fp - fm) / (2 * step)
        ana = gflat[idx]
        scale = max(np.linalg.norm(ana), np.linalg.norm(num))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(ana - num) / scale))
    return worst
