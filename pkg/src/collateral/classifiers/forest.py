"""Random forest of Gini-split decision trees."""
from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError
from .base import Classifier


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p ** 2))


def _best_split(Xn, yn, n_cls):
    """Lowest weighted child Gini over all columns of ``Xn`` and midpoints.

    Returns ``(column, threshold, impurity)`` or ``None`` when no column can
    be split.
    """
    n, f = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    onehot = np.eye(n_cls)[yn]  # (n, K)
    left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1, f, K)
    total = onehot.sum(axis=0)
    right = total - left
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    gl = 1 - np.sum(left ** 2, axis=2) / nl ** 2
    gr = 1 - np.sum(right ** 2, axis=2) / nr ** 2
    imp = (nl * gl + nr * gr) / n
    valid = xs[1:] > xs[:-1]
    imp = np.where(valid, imp, np.inf)
    flat = int(np.argmin(imp))
    pos, col = divmod(flat, f)
    if not np.isfinite(imp[pos, col]):
        return None
    thr = 0.5 * (xs[pos, col] + xs[pos + 1, col])
    # the midpoint can round onto the upper value in float32
    if thr >= xs[pos + 1, col]:
        thr = xs[pos, col]
    return col, float(thr), float(imp[pos, col])


class DecisionTree:
    """CART tree stored as flat arrays; leaves have ``feature == -1``."""

    def __init__(self, max_features: int | None = None, min_samples_leaf: int = 1):
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf

    def fit(self, X, y, n_cls: int, rng: np.random.Generator):
        X = np.asarray(X)
        d = X.shape[1]
        m = min(d, self.max_features or d)
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(None)
            return len(feature) - 1

        root = new_node()
        stack = [(root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            yn = y[idx]
            counts = np.bincount(yn, minlength=n_cls)
            value[node] = counts
            if len(idx) < 2 * self.min_samples_leaf or np.count_nonzero(counts) == 1:
                continue
            cols = np.sort(rng.choice(d, size=m, replace=False))
            split = _best_split(X[np.ix_(idx, cols)], yn, n_cls)
            if split is None:
                continue
            c, thr, _ = split
            f = cols[c]
            mask = X[idx, f] <= thr
            if mask.all() or not mask.any():
                continue
            feature[node], threshold[node] = int(f), thr
            lnode, rnode = new_node(), new_node()
            left[node], right[node] = lnode, rnode
            stack.append((rnode, idx[~mask]))
            stack.append((lnode, idx[mask]))
        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value, dtype=np.float64)
        return self

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            i = np.flatnonzero(active)
            n = node[i]
            go_left = X[i, self.feature[n]] <= self.threshold[n]
            node[i] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict_counts(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


class RandomForest(Classifier):
    """Bagged trees with ``ceil(sqrt(d))`` candidate features per split and majority vote."""

    kind = "rf"

    def __init__(self, n_estimators: int = 200, max_features: str | int = "sqrt",
                 min_samples_leaf: int = 1, seed: int = 0):
        super().__init__(seed)
        if n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf

    def hyperparameters(self):
        return {"n_estimators": self.n_estimators, "max_features": self.max_features,
                "min_samples_leaf": self.min_samples_leaf}

    def _n_split_features(self, d: int) -> int:
        if self.max_features == "sqrt":
            return math.ceil(math.sqrt(d))
        return int(self.max_features)

    def fit(self, X, y):
        X, y = self._check_fit(X, y)
        X = X.reshape(len(X), -1)
        n = len(X)
        self.n_cls_ = int(y.max()) + 1
        rng = np.random.default_rng(self.seed)
        m = self._n_split_features(X.shape[1])
        self.trees_ = []
        oob_votes = np.zeros((n, self.n_cls_))
        for _ in range(self.n_estimators):
            boot = rng.integers(0, n, size=n)
            tree = DecisionTree(m, self.min_samples_leaf).fit(X[boot], y[boot], self.n_cls_, rng)
            self.trees_.append(tree)
            oob = np.setdiff1d(np.arange(n), boot)
            if len(oob):
                pred = np.argmax(tree.predict_counts(X[oob]), axis=1)
                oob_votes[oob, pred] += 1
        seen = oob_votes.sum(axis=1) > 0
        self.oob_score_ = (float(np.mean(np.argmax(oob_votes[seen], axis=1) == y[seen]))
                           if seen.any() else float("nan"))
        return self

    def votes(self, X) -> np.ndarray:
        X = self._check_predict(X).reshape(len(X), -1)
        out = np.zeros((len(X), self.n_cls_))
        rows = np.arange(len(X))
        for tree in self.trees_:
            out[rows, np.argmax(tree.predict_counts(X), axis=1)] += 1
        return out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.votes(X), axis=1)
