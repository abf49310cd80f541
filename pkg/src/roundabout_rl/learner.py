"""Return computation, the shared parameter store, and worker update rules.

Two update schedules are provided. The interval rule pushes accumulated
gradients to the global store every t_max steps and refreshes the local
snapshot after each push. The delayed rule keeps the snapshot pulled at
episode start for the whole episode, accumulates every per-step gradient
against it, and pushes exactly once at episode end; mid-episode activity by
other workers therefore cannot influence the accumulated gradient.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import (
    NetworkConfig,
    LossWeights,
    Params,
    backward,
    clip_global_norm,
    copy_params,
    forward,
    param_keys,
    sample_action,
    zeros_like_params,
)
from .simulation import EpisodeStatus


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    lr: float = 7e-4
    entropy_beta: float = 0.01
    value_loss_weight: float = 0.5
    grad_clip_norm: float = 40.0
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.value_loss_weight, self.entropy_beta)


@dataclass
class Trajectory:
    """One agent's episode (or truncated segment) of experience."""

    frames: list[np.ndarray] = field(default_factory=list)  # uint8 (C, H, W)
    nonvisual: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    terminal: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    def append(self, frames, nonvisual, action, reward, value):
        self.frames.append(frames)
        self.nonvisual.append(nonvisual)
        self.actions.append(int(action))
        self.rewards.append(float(reward))
        self.values.append(float(value))

    def arrays(self):
        if not self.actions:
            raise ValueError("empty trajectory")
        return (
            np.stack(self.frames).astype(float),
            np.stack(self.nonvisual),
            np.array(self.actions),
            np.array(self.rewards),
        )


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Plain discounted return recursion G_t = r_t + gamma * G_{t+1}."""
    g = 0.0
    out = np.empty(len(rewards))
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def normalized_returns(
    traj: Trajectory | np.ndarray,
    gamma: float,
    l: float,
    l_max: float,
    bootstrap_value: float = 0.0,
) -> np.ndarray:
    """Length-normalized discounted returns.

    R_t = (l / l_max) * sum_{k=t..T} gamma^(k-t) r_k + gamma^(T-t+1) * V_boot.

    The factor l/l_max compensates for reward paths of different lengths
    across scenarios; the bootstrap term (for truncated segments) is a value
    estimate of the already-normalized tail and is not rescaled. Insertion
    episodes always run their full fixed route, so callers pass l == l_max
    (factor 1) for active agents; terminal trajectories use bootstrap 0.
    """
    if not 0.0 < l <= l_max:
        raise ValueError(f"need 0 < l <= l_max, got l={l}, l_max={l_max}")
    rewards = np.asarray(traj.rewards if isinstance(traj, Trajectory) else traj, dtype=float)
    if not np.isfinite(rewards).all():
        raise ValueError("rewards must be finite")
    factor = l / l_max
    g = discounted_returns(rewards, gamma)
    boot = np.empty(len(rewards))
    acc = bootstrap_value
    for t in range(len(rewards) - 1, -1, -1):
        acc = gamma * acc
        boot[t] = acc
    return factor * g + boot


@dataclass
class GradientAccumulator:
    """Per-parameter running sums of gradients plus a contribution count."""

    sums: Params
    count: int = 0

    @staticmethod
    def like(params: Params) -> "GradientAccumulator":
        return GradientAccumulator(zeros_like_params(params))

    def add(self, grads: Params) -> None:
        for k in self.sums:
            self.sums[k] += grads[k]
        self.count += 1

    @property
    def empty(self) -> bool:
        return self.count == 0

    def reset(self) -> None:
        for v in self.sums.values():
            v[...] = 0.0
        self.count = 0


@dataclass(frozen=True)
class ParameterSnapshot:
    """Immutable copy of the global parameters at a version."""

    params: Params
    version: int


class ParameterStore:
    """The shared global network: serialized pull/push with RMS-scaled descent.

    Pull returns a consistent read-only snapshot; push applies one full
    gradient set atomically (optimizer state included) and bumps the version.
    Any number of pull-only readers can run alongside pushers.
    """

    def __init__(self, params: Params, cfg: LearnerConfig, version: int = 0,
                 sq_avg: Params | None = None):
        self._lock = threading.Lock()
        self._params = copy_params(params)
        self._sq_avg = copy_params(sq_avg) if sq_avg else zeros_like_params(params)
        self._cfg = cfg
        self._version = version

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def pull(self) -> ParameterSnapshot:
        with self._lock:
            return ParameterSnapshot(copy_params(self._params, writeable=False), self._version)

    def push(self, grads: Params) -> int:
        """Apply one gradient set; returns the new version number."""
        cfg = self._cfg
        with self._lock:
            for k in list(self._params):
                g = grads[k]
                if g.shape != self._params[k].shape:
                    raise ValueError(
                        f"gradient shape {g.shape} != parameter shape "
                        f"{self._params[k].shape} for {k!r}"
                    )
                sq = self._sq_avg[k]
                sq *= cfg.rms_decay
                sq += (1.0 - cfg.rms_decay) * g * g
                self._params[k] -= cfg.lr * g / (np.sqrt(sq) + cfg.rms_epsilon)
            self._version += 1
            return self._version

    def state(self) -> tuple[Params, Params, int]:
        """Copies of (params, optimizer state, version) for checkpointing."""
        with self._lock:
            return copy_params(self._params), copy_params(self._sq_avg), self._version


def apply_gradients(store: ParameterStore, grads: Params) -> int:
    return store.push(grads)


# ---------------------------------------------------------------------------
# Rollouts and update rules
# ---------------------------------------------------------------------------


@dataclass
class EpisodeResult:
    status: EpisodeStatus
    steps: int
    total_reward: float
    initial_return: float


def rollout(
    env,
    params: Params,
    net_cfg: NetworkConfig,
    rng: np.random.Generator,
    greedy: bool = False,
) -> tuple[Trajectory, EpisodeStatus]:
    """Run one episode with fixed parameters, recording the trajectory."""
    traj = Trajectory()
    obs = env.reset(rng)
    done = False
    status = EpisodeStatus.RUNNING
    while not done:
        value, policy = forward(params, net_cfg, obs.frames.astype(float), obs.nonvisual)
        action = int(np.argmax(policy)) if greedy else sample_action(policy, rng)
        next_obs, reward, done, info = env.step(action)
        traj.append(obs.frames, obs.nonvisual, action, reward, value)
        obs = next_obs
        if done:
            status = info["status"]
    traj.terminal = True
    return traj, status


def episode_gradients(
    snapshot: ParameterSnapshot,
    traj: Trajectory,
    returns: np.ndarray,
    net_cfg: NetworkConfig,
    lcfg: LearnerConfig,
) -> Params:
    """Whole-episode gradient against the episode-start snapshot.

    Equal (to summation order) to the sum of per-step gradients evaluated at
    the same snapshot; the snapshot never changes mid-episode, so pushes by
    other workers cannot perturb the result.
    """
    frames, nonvisual, actions, _ = traj.arrays()
    grads, _ = backward(
        snapshot.params, net_cfg, frames, nonvisual, actions, returns, lcfg.loss_weights
    )
    return grads


def run_episode_update(
    env,
    store: ParameterStore,
    net_cfg: NetworkConfig,
    lcfg: LearnerConfig,
    rng: np.random.Generator,
    l: float = 1.0,
    l_max: float = 1.0,
) -> tuple[int, EpisodeResult]:
    """Delayed update: one pull at episode start, one push at episode end."""
    snapshot = store.pull()
    traj, status = rollout(env, snapshot.params, net_cfg, rng)
    returns = normalized_returns(traj, lcfg.gamma, l, l_max, bootstrap_value=0.0)
    acc = GradientAccumulator.like(snapshot.params)
    acc.add(episode_gradients(snapshot, traj, returns, net_cfg, lcfg))
    if acc.empty:
        raise RuntimeError("refusing to push an empty gradient accumulator")
    grads, _ = clip_global_norm(acc.sums, lcfg.grad_clip_norm)
    version = store.push(grads)
    result = EpisodeResult(status, len(traj), float(np.sum(traj.rewards)), float(returns[0]))
    return version, result


def run_interval_update(
    env,
    store: ParameterStore,
    net_cfg: NetworkConfig,
    lcfg: LearnerConfig,
    rng: np.random.Generator,
    t_max: int,
    l: float = 1.0,
    l_max: float = 1.0,
) -> tuple[int, EpisodeResult, int]:
    """Classic interval rule: push every t_max steps, refresh the snapshot.

    Truncated segments bootstrap from the value head at the next state.
    Returns (final version, episode result, number of pushes).
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    snapshot = store.pull()
    obs = env.reset(rng)
    traj = Trajectory()
    done = False
    status = EpisodeStatus.RUNNING
    version = snapshot.version
    pushes = 0
    total_reward = 0.0
    steps = 0
    while not done:
        value, policy = forward(snapshot.params, net_cfg, obs.frames.astype(float), obs.nonvisual)
        action = sample_action(policy, rng)
        next_obs, reward, done, info = env.step(action)
        traj.append(obs.frames, obs.nonvisual, action, reward, value)
        total_reward += reward
        steps += 1
        obs = next_obs
        if done:
            status = info["status"]
        if done or len(traj) == t_max:
            if done:
                bootstrap = 0.0
            else:
                bootstrap, _ = forward(
                    snapshot.params, net_cfg, obs.frames.astype(float), obs.nonvisual
                )
            returns = normalized_returns(traj, lcfg.gamma, l, l_max, bootstrap)
            grads = episode_gradients(snapshot, traj, returns, net_cfg, lcfg)
            grads, _ = clip_global_norm(grads, lcfg.grad_clip_norm)
            version = store.push(grads)
            pushes += 1
            snapshot = store.pull()
            traj = Trajectory()
    return version, EpisodeResult(status, steps, total_reward, 0.0), pushes


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class CheckpointData:
    params: Params
    sq_avg: Params
    version: int
    master_seed: int
    meta: dict


def save_checkpoint(
    path: str | Path,
    params: Params,
    sq_avg: Params,
    version: int,
    master_seed: int,
    meta: dict | None = None,
) -> None:
    """Write a checkpoint; float64 tensors survive a round-trip bit-exactly."""
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays.update({f"rms/{k}": v for k, v in sq_avg.items()})
    header = {"version": version, "master_seed": master_seed, "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> CheckpointData:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        params = {k[6:]: data[k] for k in data.files if k.startswith("param/")}
        sq_avg = {k[4:]: data[k] for k in data.files if k.startswith("rms/")}
    return CheckpointData(
        params, sq_avg, int(header["version"]), int(header["master_seed"]), header["meta"]
    )


def store_from_checkpoint(ckpt: CheckpointData, lcfg: LearnerConfig) -> ParameterStore:
    return ParameterStore(ckpt.params, lcfg, version=ckpt.version, sq_avg=ckpt.sq_avg)


def verify_param_shapes(params: Params, cfg: NetworkConfig) -> None:
    """Raise if a checkpoint's tensors do not match a network configuration."""
    from .network import init_params  # local to avoid building params eagerly

    expected = init_params(cfg, np.random.default_rng(0))
    missing = set(param_keys(cfg)) - set(params)
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
    for k, v in expected.items():
        if params[k].shape != v.shape:
            raise ValueError(
                f"checkpoint tensor {k!r} has shape {params[k].shape}, expected {v.shape}"
            )
