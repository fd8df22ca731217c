"""3D CNN grader and its fully connected variant for feature vectors.

Convolutional mode: four 5x5x5 stride-2 tanh convolutions with 2, 2, 4 and 4
feature maps (64**3 -> 4**3), then dense 64 and 32 tanh layers and an output
head. Feature mode drops the convolutions. Three-class heads use softmax;
two-class heads use a single sigmoid unit.
"""
from __future__ import annotations

import logging

import numpy as np

from ..errors import ConfigError, DataError, ShapeError
from ..nn import SGD, Conv3D, Dense, Flatten, Sequential, Sigmoid, Softmax, Tanh, weighted_cce
from .base import Classifier

log = logging.getLogger(__name__)

CONV_CHANNELS = (2, 2, 4, 4)
HIDDEN = (64, 32)


def build_cnn(input_shape, n_classes: int = 3, conv_channels=CONV_CHANNELS, hidden=HIDDEN,
              kernel: int = 5, seed: int = 0, dtype=np.float32) -> Sequential:
    """Network for ``input_shape`` = ``(C, E, E, E)`` (conv mode) or ``(d,)`` (feature mode)."""
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(input_shape)
    if len(shape) == 4:
        c = shape[0]
        for out in conv_channels:
            layers += [Conv3D(c, out, kernel, 2, rng, dtype), Tanh()]
            c = out
        layers.append(Flatten())
        n_in = Sequential(layers, shape).shape_trace()[-1][0]
    elif len(shape) == 1:
        n_in = shape[0]
    else:
        raise ShapeError(f"input must be (C, E, E, E) or (d,), got {shape}")
    for h in hidden:
        layers += [Dense(n_in, h, rng, dtype), Tanh()]
        n_in = h
    if n_classes == 2:
        layers += [Dense(n_in, 1, rng, dtype), Sigmoid()]
    elif n_classes > 2:
        layers += [Dense(n_in, n_classes, rng, dtype), Softmax()]
    else:
        raise ConfigError(f"need at least two classes, got {n_classes}")
    return Sequential(layers, shape)


def class_probabilities(net: Sequential, X) -> np.ndarray:
    """``(N, K)`` probabilities; a single sigmoid unit is expanded to two columns."""
    out = net(np.asarray(X, dtype=net.layers[0].params["w"].dtype
                         if net.layers[0].params else np.float32))
    if out.shape[1] == 1:
        return np.concatenate([1 - out, out], axis=1)
    return out


class CNN(Classifier):
    """Weighted-cross-entropy network trained with momentum SGD."""

    kind = "cnn"

    def __init__(self, epochs: int = 20, batch_size: int = 4, lr: float = 0.001, decay: float = 1e-6,
                 momentum: float = 0.9, n_classes: int | None = None, standardize: bool = True, seed: int = 0):
        super().__init__(seed)
        if epochs < 0 or batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        self.epochs, self.batch_size = epochs, batch_size
        self.lr, self.decay, self.momentum = lr, decay, momentum
        self.n_classes = n_classes
        self.standardize = standardize
        self.mean_ = self.scale_ = None
        self.losses_: list[float] = []

    def hyperparameters(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size, "lr": self.lr,
                "decay": self.decay, "momentum": self.momentum, "n_classes": self.n_classes,
                "standardize": self.standardize}

    def fit(self, X, y):
        X, y = self._check_fit(X, y)
        self.mean_ = self.scale_ = None
        # feature vectors (not cubes) are standardised before the dense layers
        if self.standardize and X.ndim == 2:
            self._fit_scaler(X)
            X = self._scale(X)
        X = X.astype(np.float32)
        k = self.n_classes or max(2, int(y.max()) + 1)
        if y.max() >= k:
            raise DataError(f"label {int(y.max())} out of range for {k} classes")
        self.n_cls_ = k
        counts = np.bincount(y, minlength=k).astype(float)
        # weight 1/|k|, rescaled so the weights average to one over the training set
        w = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
        self.class_weights_ = w * len(y) / np.sum(w[y])
        self.net_ = build_cnn(X.shape[1:], k, seed=self.seed)
        opt = SGD(self.lr, self.decay, self.momentum)
        rng = np.random.default_rng(self.seed)
        self.losses_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for s in range(0, len(X), self.batch_size):
                idx = order[s:s + self.batch_size]
                total += self._train_step(X[idx], y[idx], opt) * len(idx)
            self.losses_.append(total / len(X))
        return self

    def _train_step(self, xb, yb, opt: SGD) -> float:
        net = self.net_
        out = net(xb)
        probs = np.concatenate([1 - out, out], axis=1) if out.shape[1] == 1 else out
        loss, g = weighted_cce(probs, yb, self.class_weights_)
        if out.shape[1] == 1:
            g = (g[:, 1] - g[:, 0])[:, None]
        net.zero_grad()
        net.backward(g.astype(out.dtype))
        opt.step(net)
        return loss

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_predict(X)
        if self.mean_ is not None:
            X = self._scale(X).astype(np.float32)
        out = []
        for s in range(0, len(X), 16):
            out.append(class_probabilities(self.net_, X[s:s + 16]))
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)
