"""Convolutional denoising auto-encoder for 3-channel ROI cubes.

Three stride-2 5x5x5 convolutions take a ``(3, E, E, E)`` cube to a single
``(1, E/8, E/8, E/8)`` code (8**3 = 512 values for E = 64); the decoder mirrors
them with transposed convolutions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import SGD, Conv3D, ConvTranspose3D, Sequential, Sigmoid, Tanh, mse_loss
from .volume import Cube

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DaeConfig:
    noise: str = "gaussian"  # or "masking"
    sigma: float = 0.1  # noise std, or drop probability for masking noise
    epochs: int = 50
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    decay: float = 1e-6
    channels: tuple[int, ...] = (4, 2, 1)
    kernel: int = 5
    in_channels: int = 3
    edge: int = 64
    final_activation: str = "sigmoid"  # or "linear"

    def __post_init__(self):
        if self.noise not in ("gaussian", "masking"):
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.edge % (2 ** len(self.channels)):
            raise ConfigError(f"edge {self.edge} is not divisible by {2 ** len(self.channels)}")
        if self.final_activation not in ("sigmoid", "linear"):
            raise ConfigError(f"unknown final activation {self.final_activation!r}")

    @property
    def code_edge(self) -> int:
        return self.edge // 2 ** len(self.channels)


def _as_array(cube) -> np.ndarray:
    return cube.array() if isinstance(cube, Cube) else np.asarray(cube)


def corrupt(cube, seed: int, sigma: float = 0.1, noise: str = "gaussian"):
    """Seeded corruption of a [0, 1] cube, clamped back into [0, 1].

    Returns the same type it was given (``Cube`` or array).
    """
    x = _as_array(cube).astype(np.float32)
    rng = np.random.default_rng(seed)
    if noise == "gaussian":
        out = x + rng.normal(0.0, sigma, size=x.shape).astype(np.float32) if sigma > 0 else x.copy()
    elif noise == "masking":
        out = np.where(rng.random(x.shape) < sigma, np.float32(0), x)
    else:
        raise ConfigError(f"unknown noise kind {noise!r}")
    out = np.clip(out, 0, 1).astype(np.float32)
    if isinstance(cube, Cube):
        return Cube(tuple(out), cube.edge)
    return out


def build_dae(cfg: DaeConfig = DaeConfig(), seed: int = 0, dtype=np.float32) -> Sequential:
    rng = np.random.default_rng(seed)
    k = cfg.kernel
    chans = (cfg.in_channels, *cfg.channels)
    layers = []
    for a, b in zip(chans[:-1], chans[1:]):
        layers += [Conv3D(a, b, k, 2, rng, dtype), Tanh()]
    rev = chans[::-1]
    for i, (a, b) in enumerate(zip(rev[:-1], rev[1:])):
        layers.append(ConvTranspose3D(a, b, k, 2, rng, dtype))
        if i < len(rev) - 2:
            layers.append(Tanh())
        elif cfg.final_activation == "sigmoid":
            layers.append(Sigmoid())
    return Sequential(layers, (cfg.in_channels, cfg.edge, cfg.edge, cfg.edge))


def encoder_of(net: Sequential) -> Sequential:
    """The encoder half (all layers up to the first transposed convolution)."""
    cut = next(i for i, layer in enumerate(net.layers) if layer.kind == "tconv3d")
    return Sequential(net.layers[:cut], net.input_shape)


def dae_train(cubes, cfg: DaeConfig = DaeConfig(), seed: int = 0, net: Sequential | None = None):
    """Fit the auto-encoder to reconstruct clean cubes from corrupted copies.

    Returns ``(net, losses)`` with the mean training MSE of every epoch.
    """
    data = np.stack([_as_array(c) for c in cubes]).astype(np.float32) if len(cubes) else None
    if data is None:
        raise ConfigError("no training cubes")
    if data.shape[1:] != (cfg.in_channels, cfg.edge, cfg.edge, cfg.edge):
        raise ShapeError(f"cubes have shape {data.shape[1:]}, config expects "
                         f"{(cfg.in_channels, cfg.edge, cfg.edge, cfg.edge)}")
    net = build_dae(cfg, seed) if net is None else net
    opt = SGD(cfg.lr, cfg.decay, cfg.momentum)
    rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            clean = data[idx]
            noisy = corrupt(clean, int(rng.integers(2 ** 32)), cfg.sigma, cfg.noise)
            loss, grad = mse_loss(net(noisy), clean)
            net.zero_grad()
            net.backward(grad.astype(np.float32))
            opt.step(net)
            total += loss * len(idx)
        losses.append(total / len(data))
        log.info("dae epoch %d mse=%.6f", epoch + 1, losses[-1])
    return net, losses


def reconstruct(net: Sequential, cubes) -> np.ndarray:
    x = np.stack([_as_array(c) for c in cubes]).astype(np.float32)
    return net(x)


def encode(net: Sequential, cube) -> np.ndarray:
    """Flattened encoder output of one cube (512 values for a 64**3 input)."""
    x = _as_array(cube).astype(np.float32)
    if net.input_shape is not None and x.shape != net.input_shape:
        raise ShapeError(f"cube shape {x.shape} does not match {net.input_shape}")
    return encoder_of(net)(x[None])[0].ravel()
