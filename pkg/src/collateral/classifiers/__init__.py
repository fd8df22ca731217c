"""The four graders behind one ``fit(X, y)`` / ``predict(X)`` contract."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError
from ..serialize import QNET_MAGIC, clf_bytes, clf_from_bytes, qnet_bytes, qnet_from_bytes
from .base import Classifier
from .cnn import CNN, build_cnn
from .forest import DecisionTree, RandomForest, gini
from .knn import KNN
from .svm import SVM, balanced_penalties, poly_kernel, smo

KINDS = {"cnn": CNN, "knn": KNN, "rf": RandomForest, "svm": SVM}

__all__ = ["CNN", "KNN", "SVM", "Classifier", "DecisionTree", "KINDS", "RandomForest",
           "balanced_penalties", "build_cnn", "classifier_bytes", "classifier_from_bytes", "gini",
           "load_classifier", "make_classifier",
           "poly_kernel", "save_classifier", "smo"]


def make_classifier(kind: str, seed: int = 0, **hyper) -> Classifier:
    if kind not in KINDS:
        raise ConfigError(f"unknown classifier kind {kind!r}; choose from {sorted(KINDS)}")
    return KINDS[kind](seed=seed, **hyper)


def _base_state(clf: Classifier) -> dict:
    out = {"classes": clf.classes_, "n_features": np.array([clf.n_features_])}
    if getattr(clf, "mean_", None) is not None:
        out["scaler_mean"], out["scaler_scale"] = clf.mean_, clf.scale_
    return out


def _state(clf: Classifier) -> dict:
    base = _base_state(clf)
    if isinstance(clf, KNN):
        return {**base, "X": clf.X_, "y": clf.y_}
    if isinstance(clf, SVM):
        out = {**base, "X": clf.X_, "gamma": np.array([clf.gamma_])}
        for m, (a, b, idx, coef, bias) in enumerate(clf.machines_):
            out[f"m{m:03d}_pair"] = np.array([a, b])
            out[f"m{m:03d}_idx"] = idx
            out[f"m{m:03d}_coef"] = coef
            out[f"m{m:03d}_bias"] = np.array([bias])
        return out
    if isinstance(clf, RandomForest):
        out = {**base, "n_cls": np.array([clf.n_cls_])}
        for t, tree in enumerate(clf.trees_):
            for name in ("feature", "threshold", "left", "right", "value"):
                out[f"t{t:04d}_{name}"] = getattr(tree, name)
        return out
    raise ConfigError(f"cannot serialise {type(clf).__name__}")


def classifier_bytes(clf: Classifier) -> bytes:
    """CNNs go into a QNET1 container prefixed by a CLF1 header; others into CLF1."""
    if isinstance(clf, CNN):
        head = clf_bytes("cnn", clf.seed, clf.hyperparameters(),
                         {**_base_state(clf), "class_weights": clf.class_weights_})
        net = qnet_bytes(clf.net_)
        return head + struct.pack("<Q", len(net)) + net
    return clf_bytes(clf.kind, clf.seed, clf.hyperparameters(), _state(clf))


def _split_cnn(buf: bytes):
    pos = buf.rfind(QNET_MAGIC)
    if pos < 8:
        raise FormatError("CNN container lacks its network")
    (n,) = struct.unpack("<Q", buf[pos - 8:pos])
    if pos + n != len(buf):
        raise FormatError("CNN container has inconsistent length")
    return buf[:pos - 8], buf[pos:]


def classifier_from_bytes(buf: bytes) -> Classifier:
    kind_len = struct.unpack_from("<I", buf, 4)[0] if len(buf) >= 8 else 0
    kind = buf[8:8 + kind_len].decode("utf-8", "replace")
    if kind == "cnn":
        head, net = _split_cnn(buf)
        _, seed, hyper, arrays = clf_from_bytes(head)
        clf = CNN(seed=seed, **hyper)
        clf.net_ = qnet_from_bytes(net)
        clf.class_weights_ = arrays["class_weights"]
        clf.n_cls_ = len(clf.class_weights_)
    else:
        kind, seed, hyper, arrays = clf_from_bytes(buf)
        clf = make_classifier(kind, seed, **hyper)
        if isinstance(clf, KNN):
            clf.X_, clf.y_ = arrays["X"], arrays["y"]
        elif isinstance(clf, SVM):
            clf.X_, clf.gamma_ = arrays["X"], float(arrays["gamma"][0])
            n = len({k[:4] for k in arrays if k.startswith("m")})
            clf.machines_ = [
                (int(arrays[f"m{m:03d}_pair"][0]), int(arrays[f"m{m:03d}_pair"][1]), arrays[f"m{m:03d}_idx"],
                 arrays[f"m{m:03d}_coef"], float(arrays[f"m{m:03d}_bias"][0]))
                for m in range(n)
            ]
        else:
            clf.n_cls_ = int(arrays["n_cls"][0])
            clf.trees_ = []
            for t in range(len({k[:5] for k in arrays if k.startswith("t")})):
                tree = DecisionTree()
                for name in ("feature", "threshold", "left", "right", "value"):
                    setattr(tree, name, arrays[f"t{t:04d}_{name}"])
                clf.trees_.append(tree)
    if "scaler_mean" in arrays:
        clf.mean_, clf.scale_ = arrays["scaler_mean"], arrays["scaler_scale"]
    clf.classes_ = arrays["classes"]
    clf.n_features_ = int(arrays["n_features"][0])
    return clf


def save_classifier(clf: Classifier, path):
    Path(path).write_bytes(classifier_bytes(clf))


def load_classifier(path) -> Classifier:
    return classifier_from_bytes(Path(path).read_bytes())
