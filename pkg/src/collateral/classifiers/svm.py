"""Kernel SVM trained with sequential minimal optimisation (SMO)."""
from __future__ import annotations

import itertools
import logging

import numpy as np

from ..errors import ConfigError, DataError
from .base import Classifier

log = logging.getLogger(__name__)
_TAU = 1e-12


def poly_kernel(A, B, gamma: float, degree: int = 3, coef0: float = 1.0) -> np.ndarray:
    return (gamma * (np.asarray(A, dtype=np.float64) @ np.asarray(B, dtype=np.float64).T) + coef0) ** degree


def balanced_penalties(y, C: float) -> dict:
    """``C_k = C n / (K n_k)`` for every class ``k`` present in ``y``."""
    classes, counts = np.unique(np.asarray(y), return_counts=True)
    n, k = len(y), len(classes)
    return {int(c): float(C * n / (k * m)) for c, m in zip(classes, counts)}


def smo(K, y, C, tol: float = 1e-3, max_iter: int = 100_000, objective_log: list | None = None):
    """Solve the binary SVM dual with maximal-violating-pair SMO.

    ``K`` is the kernel matrix, ``y`` is in {-1, +1} and ``C`` holds one box
    bound per sample. Returns ``(alpha, b)`` for the decision function
    ``sum_i alpha_i y_i K(x_i, x) + b``. When ``objective_log`` is a list the
    dual objective ``sum(alpha) - alpha^T Q alpha / 2`` is appended after
    every update.
    """
    y = np.asarray(y, dtype=np.float64)
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), y.shape).copy()
    Q = K * np.outer(y, y)
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of alpha^T Q alpha / 2 - sum(alpha)
    for _ in range(max_iter):
        up = ((alpha < C) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0) & (y > 0))
        score = -y * G
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] < tol:
            break
        ai, aj = alpha[i], alpha[j]
        Ci, Cj = C[i], C[j]
        if y[i] != y[j]:
            quad = max(Q[i, i] + Q[j, j] + 2 * Q[i, j], _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            quad = max(Q[i, i] + Q[j, j] - 2 * Q[i, j], _TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            elif aj < 0:
                aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            elif ai < 0:
                ai, aj = 0.0, total
        di, dj = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * di + Q[:, j] * dj
        if objective_log is not None:
            objective_log.append(float(alpha.sum() - 0.5 * alpha @ (G + 1.0)))
    else:
        log.warning("SMO stopped at max_iter=%d before reaching tol=%g", max_iter, tol)
    # offset from free vectors, else the middle of the feasible interval
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        up = ((alpha < C) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0) & (y > 0))
        hi = np.max(-yG[up]) if up.any() else 0.0
        lo = np.min(-yG[low]) if low.any() else 0.0
        rho = -0.5 * float(hi + lo)
    return alpha, -rho


class SVM(Classifier):
    """Polynomial-kernel SVM, one-vs-one voting, class-balanced penalties."""

    kind = "svm"

    def __init__(self, C: float = 10.0, degree: int = 3, gamma: float | None = None, coef0: float = 1.0,
                 tol: float = 1e-3, balanced: bool = True, max_iter: int = 100_000, standardize: bool = True,
                 seed: int = 0):
        super().__init__(seed)
        if C <= 0 or tol <= 0:
            raise ConfigError("C and tol must be positive")
        self.C, self.degree, self.gamma, self.coef0 = C, degree, gamma, coef0
        self.tol, self.balanced, self.max_iter = tol, balanced, max_iter
        self.standardize = standardize
        self.mean_ = self.scale_ = None
        self.objective_log_: dict = {}

    def hyperparameters(self):
        return {"C": self.C, "degree": self.degree, "gamma": self.gamma, "coef0": self.coef0,
                "tol": self.tol, "balanced": self.balanced, "max_iter": self.max_iter,
                "standardize": self.standardize}

    def kernel(self, A, B):
        return poly_kernel(A, B, self.gamma_, self.degree, self.coef0)

    def fit(self, X, y):
        X, y = self._check_fit(X, y)
        if len(self.classes_) < 2:
            raise DataError("SVM needs at least two classes")
        self.mean_ = self.scale_ = None
        if self.standardize:
            self._fit_scaler(X)
        X = self._scale(X)
        self.gamma_ = self.gamma if self.gamma is not None else 1.0 / X.shape[1]
        pen = balanced_penalties(y, self.C) if self.balanced else {int(c): self.C for c in self.classes_}
        self.penalties_ = pen
        K = self.kernel(X, X)
        self.X_ = X
        self.machines_ = []
        self.objective_log_ = {}
        for a, b in itertools.combinations(self.classes_.tolist(), 2):
            idx = np.flatnonzero((y == a) | (y == b))
            yy = np.where(y[idx] == a, 1.0, -1.0)
            Cv = np.where(yy > 0, pen[a], pen[b])
            obj = []
            alpha, bias = smo(K[np.ix_(idx, idx)], yy, Cv, self.tol, self.max_iter, obj)
            self.objective_log_[(a, b)] = obj
            sv = alpha > 0
            self.machines_.append((a, b, idx[sv], alpha[sv] * yy[sv], bias))
        return self

    def decision_function(self, X) -> np.ndarray:
        """One column per class pair, positive favouring the first class."""
        X = self._scale(self._check_predict(X))
        K = self.kernel(X, self.X_)
        return np.stack([K[:, idx] @ coef + bias for _, _, idx, coef, bias in self.machines_], axis=1)

    def predict(self, X) -> np.ndarray:
        dec = self.decision_function(X)
        n_cls = int(self.classes_.max()) + 1
        votes = np.zeros((len(dec), n_cls), dtype=int)
        rows = np.arange(len(dec))
        for m, (a, b, *_) in enumerate(self.machines_):
            np.add.at(votes, (rows, np.where(dec[:, m] > 0, a, b)), 1)
        return np.argmax(votes, axis=1)
