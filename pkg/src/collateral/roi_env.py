"""Cube-search environment: six axis moves, IoU-sign reward, stopping rules."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError
from .volume import CubeState


@dataclass(frozen=True)
class EnvConfig:
    edge: int = 64
    tau: float = 0.85
    step: int = 1
    history_len: int = 4
    max_steps: int = 300
    osc_window: int = 20
    osc_visits: int = 4

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.edge < 1 or self.step < 1 or self.history_len < 1:
            raise ConfigError("edge, step and history_len must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    FORWARD = 4
    BACKWARD = 5

    @property
    def axis(self) -> int:
        return _MOVES[self][0]

    @property
    def sign(self) -> int:
        return _MOVES[self][1]


_MOVES = {
    Action.UP: (2, +1),
    Action.DOWN: (2, -1),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, +1),
    Action.FORWARD: (1, +1),
    Action.BACKWARD: (1, -1),
}
N_ACTIONS = len(Action)


@dataclass(frozen=True)
class Transition:
    state_before: CubeState
    action: Action
    reward: int
    state_after: CubeState
    terminal: bool


def _overlap(a: CubeState, b: CubeState) -> int:
    inter = 1
    for ca, cb in zip(a.corner, b.corner):
        inter *= max(0, min(ca + a.edge, cb + b.edge) - max(ca, cb))
    return inter


def iou(a: CubeState, b: CubeState) -> float:
    inter = _overlap(a, b)
    union = a.edge ** 3 + b.edge ** 3 - inter
    return inter / union


def reward(s_before: CubeState, s_after: CubeState, target: CubeState) -> int:
    """+1 unless the move lowered the IoU with the target (sign(0) counts as +1)."""
    return 1 if iou(s_after, target) - iou(s_before, target) >= 0 else -1


def step(state: CubeState, action: Action, dims, cfg: EnvConfig = EnvConfig()) -> CubeState:
    action = Action(action)
    corner = list(state.corner)
    corner[action.axis] += action.sign * cfg.step
    if corner[action.axis] < 0 or corner[action.axis] + state.edge > dims[action.axis]:
        return state
    return CubeState(tuple(corner), state.edge)


def train_done(state: CubeState, target: CubeState, tau: float) -> bool:
    return iou(state, target) >= tau


def transition(state: CubeState, action: Action, target: CubeState, dims,
               cfg: EnvConfig = EnvConfig()) -> Transition:
    """One training-time environment step.

    A blocked move at the volume boundary returns -1 even though the IoU did
    not change: an action that changes nothing is not progress.
    """
    after = step(state, action, dims, cfg)
    r = -1 if after == state else reward(state, after, target)
    return Transition(state, Action(action), r, after, train_done(after, target, cfg.tau))


def detect_oscillation(history, window: int = 20, min_visits: int = 4) -> bool:
    """True when one state was visited ``min_visits`` times in the last ``window`` states."""
    tail = list(history)[-window:]
    if len(tail) < min_visits:
        return False
    return max(Counter(tail).values()) >= min_visits


def corner_bounds(dims, edge: int) -> tuple[int, int, int]:
    """Largest valid corner coordinate per axis."""
    return tuple(n - edge for n in dims)
