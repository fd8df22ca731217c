"""Shared fit/predict contract."""
from __future__ import annotations

import numpy as np

from ..errors import DataError, ShapeError


class Classifier:
    kind = ""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.classes_: np.ndarray | None = None
        self.n_features_: int | None = None

    def hyperparameters(self) -> dict:
        return {}

    def _check_fit(self, X, y):
        X = np.asarray(X)
        y = np.asarray(y)
        if len(X) == 0:
            raise DataError("empty training set")
        if len(X) != len(y):
            raise ShapeError(f"{len(X)} samples but {len(y)} labels")
        if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer) and not np.all(y == np.round(y)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if np.any(y < 0):
            raise DataError("labels must be non-negative")
        self.classes_ = np.unique(y)
        self.n_features_ = int(np.prod(X.shape[1:]))
        return X, y

    def _check_predict(self, X):
        if self.classes_ is None:
            raise DataError(f"{self.kind} classifier is not fitted")
        X = np.asarray(X)
        if int(np.prod(X.shape[1:])) != self.n_features_:
            raise ShapeError(f"expected {self.n_features_} features, got {X.shape[1:]}")
        return X

    def _fit_scaler(self, X):
        """Per-feature standardisation, stored with the model (constant features keep scale 1)."""
        X = X.reshape(len(X), -1).astype(np.float64)
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)

    def _scale(self, X):
        X = X.reshape(len(X), -1).astype(np.float64)
        if getattr(self, "mean_", None) is None:
            return X
        return (X - self.mean_) / self.scale_

    def fit(self, X, y):
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))
