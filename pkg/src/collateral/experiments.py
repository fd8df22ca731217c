"""Desk-scale experiments on seeded phantoms: localization, grading table and auto-encoder."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dae, dqn, pipeline
from .roi_env import EnvConfig
from .synthgen import gen_dataset

log = logging.getLogger(__name__)

KINDS = ("cnn", "knn", "rf", "svm")


@dataclass
class LocalizationResult:
    ious: dict  # grade -> list of IoU
    train_seconds: float
    total_seconds: float
    success_rate: float

    @property
    def mean(self) -> float:
        return float(np.mean([v for vs in self.ious.values() for v in vs]))

    def grade_mean(self, grade: int) -> float:
        return float(np.mean(self.ious[grade]))


def run_localization(seed: int = 0, n_train=(10, 10, 10), n_test=(10, 10, 10), episodes: int = 900,
                     lr: float = 0.001, n_starts: int = 20, max_steps: int = 200) -> LocalizationResult:
    """Train the cube-search agent on one phantom set and localize a disjoint held-out set."""
    t0 = time.time()
    train = gen_dataset(n_train, seed=2 * seed + 1)
    env = EnvConfig(max_steps=max_steps)
    cfg = dqn.AgentConfig(episodes=episodes, lr=lr, warmup=500, seed=seed)
    t1 = time.time()
    net, tlog = dqn.train_agent([(p.tmax, p.roi) for _, p in train], cfg, env)
    train_s = time.time() - t1
    del train
    test = gen_dataset(n_test, seed=2 * seed + 2)
    ious: dict = {0: [], 1: [], 2: []}
    for k, (_, p) in enumerate(test):
        score = dqn.evaluate_localization(net, [(p.tmax, p.roi)], n_starts, seed + k, env)[0]
        ious[p.label].append(score)
    tail = tlog.episode_success[-100:]
    return LocalizationResult(ious, train_s, time.time() - t0, float(np.mean(tail)) if tail else 0.0)


@dataclass
class PipelineResult:
    direct: dict = field(default_factory=dict)  # (kind, scheme) -> EvalReport
    cascaded: dict = field(default_factory=dict)  # (kind, scheme) -> (stage report, final report)
    seconds: float = 0.0

    def reports(self):
        out = list(self.direct.values())
        for stage, final in self.cascaded.values():
            out += [stage, final]
        return out


def run_pipeline(seed: int = 0, n_per_class=(20, 5, 5), k: int = 5, cascade_scheme: str = "HOG",
                 roi_kinds=("rf", "cnn"), cascade_kinds=KINDS, hyper: dict | None = None) -> PipelineResult:
    """ROI versus RAW (direct) for ``roi_kinds``; cascaded versus direct on one scheme for ``cascade_kinds``.

    ROIs are the ground-truth cubes. ``hyper`` maps a classifier kind to
    hyperparameter overrides.
    """
    t0 = time.time()
    hyper = hyper or {}
    phantoms = gen_dataset(n_per_class, seed=seed)
    res = PipelineResult()

    def spec(kind):
        return pipeline.ClassifierSpec(kind, seed, tuple(sorted(hyper.get(kind, {}).items())))

    for scheme in ("RAW", "ROI"):
        ds = pipeline.build_feature_dataset(phantoms, scheme)
        for kind in roi_kinds:
            res.direct[(kind, scheme)] = pipeline.evaluate_direct(ds, spec(kind), k, seed)
            log.info("%s %s direct %s", kind, scheme, res.direct[(kind, scheme)].cell())
    ds = pipeline.build_feature_dataset(phantoms, cascade_scheme)
    for kind in cascade_kinds:
        if (kind, cascade_scheme) not in res.direct:
            res.direct[(kind, cascade_scheme)] = pipeline.evaluate_direct(ds, spec(kind), k, seed)
        res.cascaded[(kind, cascade_scheme)] = pipeline.evaluate_cascaded(ds, spec(kind), spec(kind), k, seed)
        log.info("%s %s direct %s cascaded %s", kind, cascade_scheme, res.direct[(kind, cascade_scheme)].cell(),
                 res.cascaded[(kind, cascade_scheme)][1].cell())
    res.seconds = time.time() - t0
    return res


def run_dae(seed: int = 0, n_cubes: int = 20, epochs: int = 10, cfg: dae.DaeConfig | None = None):
    """Train the auto-encoder on ground-truth ROI cubes of ``n_cubes`` phantoms; returns ``(net, losses)``."""
    n = (n_cubes - 2 * (n_cubes // 3), n_cubes // 3, n_cubes // 3)
    phantoms = gen_dataset(n, seed=seed)
    cubes = [pipeline.sample_features(p.volumes, p.roi, "ROI") for _, p in phantoms]
    cfg = cfg or dae.DaeConfig(epochs=epochs)
    return dae.dae_train(cubes, cfg, seed)
