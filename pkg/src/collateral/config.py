"""Flat ``section.key = value`` configuration files.

Every tunable default of the package is reachable, e.g.::

    # comments and blank lines are ignored
    seed = 7
    synth.n_per_class = 20,5,5
    env.tau = 0.85
    agent.gamma = 0.9
    dae.sigma = 0.1
    clf.rf.n_estimators = 200
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dae import DaeConfig
from .dqn import AgentConfig
from .errors import ConfigError
from .roi_env import EnvConfig


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: tuple[int, int, int] = (20, 5, 5)
    dims: tuple[int, int, int] = (128, 128, 128)
    edge: int = 64


@dataclass(frozen=True)
class LocateConfig:
    n_starts: int = 20
    how: str = "median"


@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    scheme: str = "HOG"
    kind: str = "rf"
    mode: str = "direct"
    roi_source: str = "ground_truth"


@dataclass(frozen=True)
class CnnConfig:
    epochs: int = 20
    batch_size: int = 4
    lr: float = 0.001
    decay: float = 1e-6
    momentum: float = 0.9


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3
    p: float = 2.0


@dataclass(frozen=True)
class RfConfig:
    n_estimators: int = 200
    min_samples_leaf: int = 1


@dataclass(frozen=True)
class SvmConfig:
    C: float = 10.0
    degree: int = 3
    coef0: float = 1.0
    tol: float = 1e-3
    balanced: bool = True


@dataclass(frozen=True)
class Settings:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    locate: LocateConfig = field(default_factory=LocateConfig)
    dae: DaeConfig = field(default_factory=DaeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    rf: RfConfig = field(default_factory=RfConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)

    def classifier_hyper(self, kind: str) -> dict:
        if kind not in ("cnn", "knn", "rf", "svm"):
            raise ConfigError(f"unknown classifier kind {kind!r}")
        return dataclasses.asdict(getattr(self, kind))


_ALIASES = {"clf.cnn": "cnn", "clf.knn": "knn", "clf.rf": "rf", "clf.svm": "svm"}


def _parse(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if tp in (int, float, str):
            return tp(raw)
        if origin is tuple:
            args = typing.get_args(tp)
            elem = args[0]
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if len(args) > 1 and args[1] is not Ellipsis and len(parts) != len(args):
                raise ValueError(f"expected {len(args)} values")
            return tuple(elem(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config(text: str, base: Settings | None = None) -> Settings:
    """Apply ``key = value`` lines on top of ``base`` (defaults when omitted)."""
    base = base or Settings()
    updates: dict[str, dict] = {}
    top: dict = {}
    top_hints = _hints(Settings)
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        for alias, real in _ALIASES.items():
            if key.startswith(alias + "."):
                key = real + key[len(alias):]
        if "." not in key:
            if key not in top_hints or dataclasses.is_dataclass(getattr(base, key, None)):
                raise ConfigError(f"line {n}: unknown key {key!r}")
            top[key] = _parse(value, top_hints[key], key)
            continue
        section, name = key.split(".", 1)
        sub = getattr(base, section, None)
        if not dataclasses.is_dataclass(sub):
            raise ConfigError(f"line {n}: unknown section {section!r}")
        hints = _hints(type(sub))
        if name not in hints:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        updates.setdefault(section, {})[name] = _parse(value, hints[name], key)
    for section, vals in updates.items():
        top[section] = dataclasses.replace(getattr(base, section), **vals)
    return dataclasses.replace(base, **top)


def load_config(path, base: Settings | None = None) -> Settings:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(encoding="utf-8"), base)


def dump_config(settings: Settings) -> str:
    """Every setting as ``key = value`` lines; ``parse_config`` reads it back."""
    lines = [f"seed = {settings.seed}"]
    for f in dataclasses.fields(settings):
        sub = getattr(settings, f.name)
        if not dataclasses.is_dataclass(sub):
            continue
        for g in dataclasses.fields(sub):
            v = getattr(sub, g.name)
            text = ",".join(str(x) for x in v) if isinstance(v, tuple) else str(v)
            lines.append(f"{f.name}.{g.name} = {text}")
    return "\n".join(lines) + "\n"
