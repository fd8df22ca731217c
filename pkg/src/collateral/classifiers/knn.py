"""Brute-force k-nearest-neighbour vote."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .base import Classifier


class KNN(Classifier):
    """Uniform-weight vote of the ``k`` nearest training points (Minkowski ``p``).

    Vote ties go to the lowest class index. Distance ties between neighbours
    are broken by training order.
    """

    kind = "knn"

    def __init__(self, k: int = 3, p: float = 2.0, seed: int = 0):
        super().__init__(seed)
        if k < 1 or p < 1:
            raise ConfigError("k must be >= 1 and p >= 1")
        self.k, self.p = k, p

    def hyperparameters(self):
        return {"k": self.k, "p": self.p}

    def fit(self, X, y):
        X, y = self._check_fit(X, y)
        if self.k > len(X):
            raise ConfigError(f"k={self.k} exceeds training size {len(X)}")
        self.X_ = X.reshape(len(X), -1).astype(np.float64)
        self.y_ = y
        return self

    def distances(self, X) -> np.ndarray:
        X = self._check_predict(X).reshape(len(X), -1).astype(np.float64)
        if self.p == 2:
            d2 = (X ** 2).sum(1)[:, None] + (self.X_ ** 2).sum(1)[None] - 2 * X @ self.X_.T
            return np.sqrt(np.maximum(d2, 0))
        return (np.abs(X[:, None, :] - self.X_[None]) ** self.p).sum(-1) ** (1 / self.p)

    def predict(self, X) -> np.ndarray:
        d = self.distances(X)
        nn = np.argsort(d, axis=1, kind="stable")[:, :self.k]
        n_cls = int(self.y_.max()) + 1
        votes = np.zeros((len(d), n_cls), dtype=int)
        for col in range(self.k):
            np.add.at(votes, (np.arange(len(d)), self.y_[nn[:, col]]), 1)
        # argmax returns the first (lowest) class among equal counts
        return np.argmax(votes, axis=1)
