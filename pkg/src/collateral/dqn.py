"""Deep Q-learning agent that moves a fixed-size cube towards the lesion.

The observation is the content of the last ``history_len`` cubes visited,
average-pooled to ``obs_size**3`` and scaled by the volume maximum. Pooling
uses a precomputed box-filtered copy of the volume so that rendering a frame
is a strided slice.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import SGD, Conv3D, Dense, Flatten, Sequential, Tanh
from .roi_env import (
    N_ACTIONS,
    Action,
    EnvConfig,
    corner_bounds,
    detect_oscillation,
    iou,
    step,
    transition,
)
from .volume import CubeState, Volume3D

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    gamma: float = 0.9
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_frac: float = 0.5
    batch_size: int = 32
    target_sync: int = 200
    replay_capacity: int = 10_000
    episodes: int = 300
    lr: float = 0.01
    momentum: float = 0.9
    decay: float = 1e-6
    obs_size: int = 16
    conv_channels: tuple[int, int] = (8, 16)
    hidden: int = 64
    warmup: int = 200
    train_every: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ConfigError("replay capacity must hold at least one batch")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")

    def epsilon(self, episode: int) -> float:
        span = max(1, int(self.episodes * self.eps_decay_frac))
        frac = min(1.0, episode / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


def discounted_return(rewards, gamma: float) -> float:
    return float(sum(r * gamma ** i for i, r in enumerate(rewards)))


class Observer:
    """Renders pooled, normalised cube contents of one volume."""

    def __init__(self, vol: Volume3D | np.ndarray, edge: int, obs_size: int = 16):
        data = vol.data if isinstance(vol, Volume3D) else np.asarray(vol, dtype=np.float32)
        self.dims = tuple(data.shape)
        obs_size = min(obs_size, edge)
        if edge % obs_size:
            raise ConfigError(f"edge {edge} is not a multiple of observation size {obs_size}")
        self.edge, self.obs_size = edge, obs_size
        self.factor = f = edge // obs_size
        scale = float(data.max())
        # box means over f**3 blocks anchored at every voxel, via a summed-volume table
        s = np.zeros(tuple(n + 1 for n in data.shape))
        s[1:, 1:, 1:] = data.astype(np.float64).cumsum(0).cumsum(1).cumsum(2)
        box = (s[f:, f:, f:] - s[:-f, f:, f:] - s[f:, :-f, f:] - s[f:, f:, :-f]
               + s[:-f, :-f, f:] + s[:-f, f:, :-f] + s[f:, :-f, :-f] - s[:-f, :-f, :-f])
        box /= f ** 3
        if scale > 0:
            box /= scale
        self.box = box.astype(np.float32)

    def frame(self, corner) -> np.ndarray:
        x, y, z = corner
        f, n = self.factor, self.obs_size
        return self.box[x:x + f * n:f, y:y + f * n:f, z:z + f * n:f]

    def observe(self, history) -> np.ndarray:
        """Stack of frames for the given state history (oldest first)."""
        return np.stack([self.frame(c) for c in history])


def initial_history(corner, history_len: int):
    return (tuple(corner),) * history_len


def push_history(history, corner):
    return history[1:] + (tuple(corner),)


def build_qnet(history_len: int = 4, obs_size: int = 16, conv_channels=(8, 16), hidden: int = 64,
               seed: int = 0, dtype=np.float32) -> Sequential:
    rng = np.random.default_rng(seed)
    c1, c2 = conv_channels
    side = obs_size
    for _ in range(2):
        side = (side + 2 - 3) // 2 + 1
    layers = [
        Conv3D(history_len, c1, 3, 2, rng, dtype), Tanh(),
        Conv3D(c1, c2, 3, 2, rng, dtype), Tanh(),
        Flatten(),
        Dense(c2 * side ** 3, hidden, rng, dtype), Tanh(),
        Dense(hidden, N_ACTIONS, rng, dtype),
    ]
    return Sequential(layers, (history_len, obs_size, obs_size, obs_size))


def q_forward(params, obs) -> np.ndarray:
    """Action values for one observation (C, s, s, s) or a batch of them."""
    obs = np.asarray(obs)
    single = obs.ndim == 4
    batch = obs[None] if single else obs
    if isinstance(params, Sequential) and params.input_shape and batch.shape[1:] != params.input_shape:
        raise ShapeError(f"observation {batch.shape[1:]} does not match network input {params.input_shape}")
    q = params(batch.astype(np.float32) if isinstance(params, Sequential) else batch)
    q = np.asarray(q)
    return q[0] if single else q


@dataclass(frozen=True)
class ReplayItem:
    source: int
    history: tuple
    action: int
    reward: int
    next_history: tuple
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring; the oldest item is evicted first.

    Items hold state histories rather than rendered observations, which are
    re-rendered from the observers when a batch is drawn.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.items: deque[ReplayItem] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.items)

    def push(self, item: ReplayItem):
        self.items.append(item)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[ReplayItem]:
        idx = rng.choice(len(self.items), size=batch_size, replace=False)
        return [self.items[i] for i in idx]


def bellman_target(reward: float, terminal: bool, q_next, gamma: float) -> float:
    """``r`` for terminal transitions, ``r + gamma max_a Q_target(s', a)`` otherwise."""
    if terminal:
        return float(reward)
    return float(reward + gamma * np.max(q_next))


def render_batch(batch, observers):
    obs = np.stack([observers[it.source].observe(it.history) for it in batch])
    nxt = np.stack([observers[it.source].observe(it.next_history) for it in batch])
    return obs, nxt


def td_loss(net: Sequential, obs, actions, targets) -> float:
    q = net(obs)
    rows = np.arange(len(actions))
    return float(np.mean((q[rows, actions] - targets) ** 2))


def td_update(net: Sequential, obs, actions, targets, opt: SGD) -> float:
    """One SGD step on ``mean (Q(s, a) - target)^2``; returns the pre-step loss."""
    q = net(obs)
    rows = np.arange(len(actions))
    diff = q[rows, actions] - targets
    grad = np.zeros_like(q)
    grad[rows, actions] = 2 * diff / len(actions)
    net.zero_grad()
    net.backward(grad)
    opt.step(net)
    return float(np.mean(diff ** 2))


def batch_targets(batch, q_next, gamma: float) -> np.ndarray:
    return np.array([bellman_target(it.reward, it.terminal, qn, gamma) for it, qn in zip(batch, q_next)],
                    dtype=np.float32)


def select_action(net, obs, eps: float, rng: np.random.Generator) -> int:
    if rng.random() < eps:
        return int(rng.integers(N_ACTIONS))
    return int(np.argmax(q_forward(net, obs)))


def random_corner(rng: np.random.Generator, dims, edge: int) -> tuple[int, int, int]:
    hi = corner_bounds(dims, edge)
    return tuple(int(rng.integers(0, h + 1)) for h in hi)


@dataclass
class TrainLog:
    episode_steps: list = field(default_factory=list)
    episode_success: list = field(default_factory=list)
    losses: list = field(default_factory=list)


def train_agent(dataset, cfg: AgentConfig = AgentConfig(), env_cfg: EnvConfig = EnvConfig(),
                net: Sequential | None = None, log_every: int = 50):
    """Train a Q-network on ``[(tmax_volume, target_roi), ...]``.

    Returns ``(net, TrainLog)``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    observers = [Observer(vol, env_cfg.edge, cfg.obs_size) for vol, _ in dataset]
    targets = [roi for _, roi in dataset]
    obs_size = observers[0].obs_size
    if net is None:
        net = build_qnet(env_cfg.history_len, obs_size, cfg.conv_channels, cfg.hidden, cfg.seed)
    target_net = net.copy()
    opt = SGD(cfg.lr, cfg.decay, cfg.momentum)
    buf = ReplayBuffer(cfg.replay_capacity)
    out = TrainLog()
    updates = 0
    env_steps = 0

    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep)
        src = int(rng.integers(len(dataset)))
        ob, target = observers[src], targets[src]
        state = CubeState(random_corner(rng, ob.dims, env_cfg.edge), env_cfg.edge)
        hist = initial_history(state.corner, env_cfg.history_len)
        success = False
        n_steps = 0
        for _ in range(env_cfg.max_steps):
            a = select_action(net, ob.observe(hist), eps, rng)
            tr = transition(state, Action(a), target, ob.dims, env_cfg)
            nxt = push_history(hist, tr.state_after.corner)
            buf.push(ReplayItem(src, hist, a, tr.reward, nxt, tr.terminal))
            state, hist = tr.state_after, nxt
            n_steps += 1
            env_steps += 1
            if len(buf) >= max(cfg.batch_size, cfg.warmup) and env_steps % cfg.train_every == 0:
                batch = buf.sample(cfg.batch_size, rng)
                obs, obs_next = render_batch(batch, observers)
                y = batch_targets(batch, target_net(obs_next), cfg.gamma)
                loss = td_update(net, obs, np.array([it.action for it in batch]), y, opt)
                out.losses.append(loss)
                updates += 1
                if updates % cfg.target_sync == 0:
                    target_net.load_state(net)
            if tr.terminal:
                success = True
                break
        out.episode_steps.append(n_steps)
        out.episode_success.append(success)
        if log_every and (ep + 1) % log_every == 0:
            recent = out.episode_success[-log_every:]
            log.info("episode %d eps=%.2f success=%.2f loss=%.4f", ep + 1, eps,
                     float(np.mean(recent)), float(np.mean(out.losses[-500:] or [0])))
    return net, out


@dataclass
class EpisodeResult:
    final: CubeState
    trace: list
    oscillated: bool


def _resolve_observer(vols, env_cfg: EnvConfig, obs_size: int) -> Observer:
    if isinstance(vols, Observer):
        return vols
    if isinstance(vols, (list, tuple)):
        vols = vols[0]
    return Observer(vols, env_cfg.edge, obs_size)


def _obs_size_of(params, default=16):
    if isinstance(params, Sequential) and params.input_shape:
        return params.input_shape[1]
    return default


def run_episodes(params, vols, starts, env_cfg: EnvConfig = EnvConfig()) -> list[EpisodeResult]:
    """Greedy rollouts from several starts, advanced in lockstep.

    A rollout stops when it oscillates (see ``detect_oscillation``) or after
    ``max_steps`` moves. An oscillating rollout returns the state with the
    highest action value among the states it kept revisiting.
    """
    ob = _resolve_observer(vols, env_cfg, _obs_size_of(params))
    n = len(starts)
    states = [CubeState(tuple(s.corner if isinstance(s, CubeState) else s), env_cfg.edge) for s in starts]
    hists = [initial_history(s.corner, env_cfg.history_len) for s in states]
    traces = [[s] for s in states]
    best_q: list[dict] = [dict() for _ in range(n)]
    active = list(range(n))
    done = [None] * n
    for _ in range(env_cfg.max_steps):
        if not active:
            break
        obs = np.stack([ob.observe(hists[i]) for i in active])
        q = q_forward(params, obs)
        still = []
        for row, i in enumerate(active):
            qmax = float(np.max(q[row]))
            key = states[i]
            best_q[i][key] = max(best_q[i].get(key, -np.inf), qmax)
            nxt = step(states[i], Action(int(np.argmax(q[row]))), ob.dims, env_cfg)
            states[i] = nxt
            hists[i] = push_history(hists[i], nxt.corner)
            traces[i].append(nxt)
            if detect_oscillation(traces[i], env_cfg.osc_window, env_cfg.osc_visits):
                done[i] = _oscillation_pick(traces[i], best_q[i], env_cfg)
            else:
                still.append(i)
        active = still
    results = []
    for i in range(n):
        if done[i] is None:
            results.append(EpisodeResult(states[i], traces[i], False))
        else:
            results.append(EpisodeResult(done[i], traces[i], True))
    return results


def _oscillation_pick(trace, best_q, env_cfg: EnvConfig) -> CubeState:
    tail = trace[-env_cfg.osc_window:]
    counts = {}
    for s in tail:
        counts[s] = counts.get(s, 0) + 1
    cycling = [s for s in dict.fromkeys(tail) if counts[s] >= 2]
    # the newest state has no action value yet; fall back to -inf for it
    return max(cycling, key=lambda s: best_q.get(s, -np.inf))


def run_episode(params, vols, start, env_cfg: EnvConfig = EnvConfig()):
    """Greedy rollout from one start; returns ``(final_state, trace)``."""
    res = run_episodes(params, vols, [start], env_cfg)[0]
    return res.final, res.trace


def aggregate_corners(corners, dims, edge: int, how: str = "median") -> CubeState:
    arr = np.asarray(corners, dtype=float)
    if how == "median":
        agg = np.median(arr, axis=0)
    elif how == "mean":
        agg = arr.mean(axis=0)
    else:
        raise ConfigError(f"unknown aggregation {how!r}")
    hi = corner_bounds(dims, edge)
    corner = tuple(int(np.clip(np.rint(v), 0, h)) for v, h in zip(agg, hi))
    return CubeState(corner, edge)


def localize(params, vols, n_starts: int = 20, seed: int = 0, env_cfg: EnvConfig = EnvConfig(),
             how: str = "median", return_runs: bool = False):
    """Run ``n_starts`` greedy searches from random cubes and aggregate their ends."""
    if n_starts < 1:
        raise ConfigError("n_starts must be >= 1")
    ob = _resolve_observer(vols, env_cfg, _obs_size_of(params))
    rng = np.random.default_rng(seed)
    starts = [random_corner(rng, ob.dims, env_cfg.edge) for _ in range(n_starts)]
    runs = run_episodes(params, ob, starts, env_cfg)
    roi = aggregate_corners([r.final.corner for r in runs], ob.dims, env_cfg.edge, how)
    return (roi, runs) if return_runs else roi


def evaluate_localization(params, dataset, n_starts: int = 20, seed: int = 0,
                          env_cfg: EnvConfig = EnvConfig()) -> list[float]:
    """IoU of ``localize`` against the ground truth for each ``(volume, roi)``."""
    out = []
    for k, (vol, roi) in enumerate(dataset):
        pred = localize(params, vol, n_starts, seed + k, env_cfg)
        out.append(iou(pred, roi))
    return out
