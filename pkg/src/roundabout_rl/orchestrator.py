"""Multi-environment training with validation-based model selection.

One environment instance exists per (scenario, entry lane); every instance
hosts exactly one inserting agent. Training instances compute gradients and
push them to the shared store; validation instances only pull weights, run
greedy episodes, and score checkpoints so the best one can be kept.

With ``workers=1`` instances run round-robin in a single thread and the
whole run is bit-reproducible from the master seed. With more workers each
thread owns a disjoint slice of the instances and contends only on the
parameter store.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environment import (
    ConstantSpeedController,
    GapKeepingController,
    InsertionEnv,
    InsertionEnvConfig,
    PassiveControllerProtocol,
    PassiveTrainingEnv,
    PolicyPassiveController,
    RewardConfig,
)
from .learner import (
    GradientAccumulator,
    LearnerConfig,
    ParameterStore,
    Trajectory,
    episode_gradients,
    normalized_returns,
    rollout,
    run_episode_update,
)
from .maps import ScenarioMap, resolve_map
from .network import NetworkConfig, clip_global_norm, forward, init_params, sample_action
from .noise import NoiseConfig
from .perception import PerceptionConfig
from .seeding import (
    NS_INSTANCE,
    NS_NETWORK,
    NS_PASSIVE_TRAIN,
    NS_TRAIN_EPISODE,
    NS_VALIDATION,
    derive_rng,
)
from .simulation import EpisodeStatus, SimConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainRunConfig:
    """Multi-environment layout and schedule for insertion training.

    The default layout spans four training scenarios plus one validation
    scenario; per-instance passive caps and entry counts give 19 instances
    with a total passive capacity of 114.
    """

    training_maps: tuple[str, ...] = ("training_1", "training_2", "training_3", "training_4")
    validation_map: str = "validation"
    max_passives: tuple[int, ...] = (6, 3, 6, 6)
    validation_max_passives: int = 9
    entry_counts: tuple[int, ...] = (4, 4, 3, 4)
    validation_entry_count: int = 4
    validation_cadence: int = 500  # training episodes per instance between sweeps
    validation_episodes: int = 100  # greedy episodes per validation instance per sweep
    total_episodes: int = 2000  # training episodes per instance
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if len(self.max_passives) != len(self.training_maps) or len(self.entry_counts) != len(
            self.training_maps
        ):
            raise ValueError("per-map settings must match the training map list")
        if self.validation_cadence < 1 or self.total_episodes < 1 or self.workers < 1:
            raise ValueError(f"invalid schedule: {self}")

    @property
    def n_instances(self) -> int:
        return sum(self.entry_counts) + self.validation_entry_count

    @property
    def total_passive_capacity(self) -> int:
        cap = sum(m * e for m, e in zip(self.max_passives, self.entry_counts))
        return cap + self.validation_max_passives * self.validation_entry_count


@dataclass(frozen=True)
class PassiveTrainConfig:
    """Scenario set and crowd sizes for the passive (traffic) training stage."""

    maps: tuple[str, ...] = (
        "training_1",
        "training_2",
        "training_3",
        "training_4",
        "validation",
        "test_roundabout",
    )
    max_passives: tuple[int, ...] = (16, 8, 12, 16, 16, 24)
    episodes_per_map: int = 200
    horizon: int = 2000
    master_seed: int = 0

    def __post_init__(self):
        if len(self.max_passives) != len(self.maps):
            raise ValueError("max_passives must match the map list")


@dataclass
class EnvironmentInstance:
    """One (scenario, entry lane) slot hosting a single inserting agent."""

    map_name: str
    map_index: int
    entry_index: int
    env: InsertionEnv
    seed_key: tuple[int, int]
    max_passives: int
    validation: bool = False
    episode_counter: int = 0


@dataclass
class Checkpoint:
    params: dict
    validation_reaches: float
    mean_steps: float
    version: int
    episodes_done: int


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[Checkpoint]
    final_version: int


def select_best(history: list[Checkpoint]) -> Checkpoint:
    """Highest validation reach rate; ties prefer fewer steps, then age."""
    if not history:
        raise ValueError("empty checkpoint history")
    return min(history, key=lambda c: (-c.validation_reaches, c.mean_steps, c.version))


class ProgressLog:
    """One JSON record per episode, appended to a .jsonl file."""

    def __init__(self, path: str | Path | None):
        self._fh = open(path, "a", encoding="utf-8") if path else None
        self._lock = threading.Lock()

    def write(self, **record) -> None:
        if self._fh is None:
            return
        with self._lock:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


@dataclass
class TrainSetup:
    """Shared knobs for building instances; kept apart from the schedule."""

    sim: SimConfig = field(default_factory=SimConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    percep: PerceptionConfig = field(default_factory=PerceptionConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    env_cfg: InsertionEnvConfig = field(default_factory=InsertionEnvConfig)
    passive_controller_factory: object = GapKeepingController
    maps: dict[str, ScenarioMap] | None = None  # overrides bundled maps

    def get_map(self, name: str) -> ScenarioMap:
        if self.maps and name in self.maps:
            return self.maps[name]
        return resolve_map(name)


def build_instances(cfg: TrainRunConfig, setup: TrainSetup) -> list[EnvironmentInstance]:
    """One instance per (map, entry lane); validation instances come last.

    Instance seeds derive from the master seed keyed by (map index, entry
    index), with the validation map at index len(training_maps).
    """
    instances = []
    layouts = [
        (i, name, cfg.entry_counts[i], cfg.max_passives[i], False)
        for i, name in enumerate(cfg.training_maps)
    ]
    layouts.append(
        (
            len(cfg.training_maps),
            cfg.validation_map,
            cfg.validation_entry_count,
            cfg.validation_max_passives,
            True,
        )
    )
    for map_index, name, n_entries, max_p, is_validation in layouts:
        scenario = setup.get_map(name)
        if n_entries < 1:
            raise ValueError(f"map {name} configured with zero entry lanes")
        if n_entries > scenario.n_entries:
            raise ValueError(
                f"map {name} has {scenario.n_entries} entries, config wants {n_entries}"
            )
        for entry in range(n_entries):
            noise = NoiseConfig.disabled() if is_validation else setup.noise
            env = InsertionEnv(
                scenario,
                entry,
                env_cfg=_with_max_passives(setup.env_cfg, max_p),
                sim=setup.sim,
                noise=noise,
                percep=setup.percep,
                reward=setup.reward,
                passive_controller=setup.passive_controller_factory(),
            )
            instances.append(
                EnvironmentInstance(
                    map_name=name,
                    map_index=map_index,
                    entry_index=entry,
                    env=env,
                    seed_key=(map_index, entry),
                    max_passives=max_p,
                    validation=is_validation,
                )
            )
    return instances


def _with_max_passives(env_cfg: InsertionEnvConfig, max_passives: int) -> InsertionEnvConfig:
    from dataclasses import replace

    return replace(env_cfg, max_passives=max_passives)


def validation_sweep(
    instances: list[EnvironmentInstance],
    store: ParameterStore,
    net_cfg: NetworkConfig,
    cfg: TrainRunConfig,
    sweep_index: int,
) -> tuple[float, float]:
    """Greedy frozen-weights evaluation on the validation instances.

    Pull-only: never pushes, so the global version is unchanged. Returns
    (reach rate, mean steps) over all sweep episodes.
    """
    snapshot = store.pull()
    reached = 0
    total = 0
    steps = 0
    for k, inst in enumerate(instances):
        assert inst.validation
        for ep in range(cfg.validation_episodes):
            rng = derive_rng(cfg.master_seed, NS_VALIDATION, sweep_index, k, ep)
            try:
                _, status = rollout(inst.env, snapshot.params, net_cfg, rng, greedy=True)
            except RuntimeError:
                # Step-guard trip: a stalled policy scores as a non-reach so
                # selection can proceed (the guard is not part of the metric
                # protocol, which runs uncapped).
                status = EpisodeStatus.RUNNING
            total += 1
            steps += inst.env.world.step_count
            if status is EpisodeStatus.REACHED:
                reached += 1
    return reached / total, steps / total


def train_active(
    cfg: TrainRunConfig,
    setup: TrainSetup,
    net_cfg: NetworkConfig,
    store: ParameterStore | None = None,
    progress: ProgressLog | None = None,
) -> TrainResult:
    """Train the inserting agent across all instances simultaneously.

    Every training instance runs delayed episode updates against the shared
    store; after each block of validation_cadence episodes per instance a
    frozen-weights sweep scores the current parameters and the best scoring
    checkpoint is retained.
    """
    instances = build_instances(cfg, setup)
    training = [i for i in instances if not i.validation]
    validating = [i for i in instances if i.validation]
    if store is None:
        store = ParameterStore(
            init_params(net_cfg, derive_rng(cfg.master_seed, NS_NETWORK)), setup.learner
        )
    progress = progress or ProgressLog(None)
    history: list[Checkpoint] = []
    best: Checkpoint | None = None

    def run_block(insts: list[EnvironmentInstance], episodes: int) -> None:
        for _ in range(episodes):
            for inst in insts:
                rng = derive_rng(
                    cfg.master_seed, NS_TRAIN_EPISODE, *inst.seed_key, inst.episode_counter
                )
                version, result = run_episode_update(
                    inst.env, store, net_cfg, setup.learner, rng
                )
                inst.episode_counter += 1
                progress.write(
                    instance=f"{inst.map_name}/{inst.entry_index}",
                    episode=inst.episode_counter,
                    outcome=result.status.value,
                    steps=result.steps,
                    reward=result.total_reward,
                    version=version,
                )

    blocks = -(-cfg.total_episodes // cfg.validation_cadence)
    for sweep_index in range(blocks):
        block = min(cfg.validation_cadence, cfg.total_episodes - sweep_index * cfg.validation_cadence)
        if cfg.workers <= 1 or len(training) == 1:
            run_block(training, block)
        else:
            slices = [training[i :: cfg.workers] for i in range(cfg.workers)]
            threads = [
                threading.Thread(target=run_block, args=(sl, block))
                for sl in slices
                if sl
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        version_before = store.version
        reaches, mean_steps = validation_sweep(validating, store, net_cfg, cfg, sweep_index)
        assert store.version == version_before, "validation must not touch the store"
        params, _, version = store.state()
        ckpt = Checkpoint(
            params=params,
            validation_reaches=reaches,
            mean_steps=mean_steps,
            version=version,
            episodes_done=(sweep_index * cfg.validation_cadence + block) * len(training),
        )
        history.append(ckpt)
        if best is None or select_best([best, ckpt]) is ckpt:
            best = ckpt
        progress.write(
            validation_sweep=sweep_index,
            reaches=reaches,
            mean_steps=mean_steps,
            version=version,
            best_reaches=best.validation_reaches,
        )
        log.info(
            "validation sweep %d: reaches=%.3f steps=%.1f (best %.3f)",
            sweep_index, reaches, mean_steps, best.validation_reaches,
        )
    if best is None:
        raise RuntimeError("training produced no validation sweeps")
    if not history or best.validation_reaches <= 0.0:
        log.warning("no validation improvement recorded; returning the last checkpoint")
        best = history[-1]
    return TrainResult(best=best, history=history, final_version=store.version)


def train_passives(
    cfg: PassiveTrainConfig,
    setup: TrainSetup,
    net_cfg: NetworkConfig,
    store: ParameterStore | None = None,
    progress: ProgressLog | None = None,
) -> tuple[ParameterStore, list[float]]:
    """Multi-agent traffic training over all scenarios simultaneously.

    All passives in a round share one policy and learn concurrently; each
    agent's returns are normalized by its own lap length over the longest
    lap among the scenario set, and each agent pushes its own episode
    gradient. Emits the moving average of the positive-episode ratio for
    learning-curve plots; returns the store and that series.
    """
    scenarios = [setup.get_map(name) for name in cfg.maps]
    l_max = max(p.length for m in scenarios for p in m.traffic_paths())
    if store is None:
        store = ParameterStore(
            init_params(net_cfg, derive_rng(cfg.master_seed, NS_NETWORK)), setup.learner
        )
    progress = progress or ProgressLog(None)
    envs = [
        PassiveTrainingEnv(
            m, cfg.max_passives[i], sim=setup.sim, percep=setup.percep,
            reward=setup.reward, horizon=cfg.horizon,
        )
        for i, m in enumerate(scenarios)
    ]
    ratio_series: list[float] = []
    window: list[float] = []
    for episode in range(cfg.episodes_per_map):
        for mi, env in enumerate(envs):
            rng = derive_rng(cfg.master_seed, NS_PASSIVE_TRAIN, mi, episode)
            snapshot = store.pull()
            ratio = _passive_round(env, snapshot, store, net_cfg, setup.learner, rng, l_max)
            window.append(ratio)
            if len(window) > 50:
                window.pop(0)
            moving = sum(window) / len(window)
            ratio_series.append(moving)
            progress.write(
                instance=f"passive/{cfg.maps[mi]}",
                episode=episode,
                positive_ratio=ratio,
                moving_avg_positive_ratio=moving,
                version=store.version,
            )
    return store, ratio_series


def _passive_round(env, snapshot, store, net_cfg, lcfg, rng, l_max) -> float:
    """One multi-agent round on one scenario; returns the positive ratio."""
    observations = env.reset(rng)
    n_start = env.n_agents
    trajectories = [Trajectory() for _ in range(n_start)]
    live = list(range(n_start))
    lap_lengths = list(env.lap_length)
    outcomes = [False] * n_start
    truncated = [False] * n_start
    bootstrap_obs = [None] * n_start
    while live:
        actions = []
        decisions = []
        for k, _agent in enumerate(live):
            obs = observations[k]
            value, policy = forward(
                snapshot.params, net_cfg, obs.frames.astype(float), obs.nonvisual
            )
            a = sample_action(policy, rng)
            actions.append(a)
            decisions.append((obs, a, value))
        transitions = env.step([int(a) for a in actions])
        next_obs = []
        next_live = []
        for k, tr in enumerate(transitions):
            agent = live[k]
            obs, a, value = decisions[k]
            trajectories[agent].append(obs.frames, obs.nonvisual, a, tr.reward, value)
            if tr.done:
                outcomes[agent] = tr.reached
                truncated[agent] = tr.truncated
                if tr.truncated:
                    bootstrap_obs[agent] = tr.obs
            else:
                next_obs.append(tr.obs)
                next_live.append(agent)
        observations = next_obs
        live = next_live
    for agent, traj in enumerate(trajectories):
        if len(traj) == 0:
            continue
        boot = 0.0
        if truncated[agent]:
            obs = bootstrap_obs[agent]
            boot, _ = forward(
                snapshot.params, net_cfg, obs.frames.astype(float), obs.nonvisual
            )
        returns = normalized_returns(
            traj, lcfg.gamma, lap_lengths[agent], l_max, bootstrap_value=boot
        )
        acc = GradientAccumulator.like(snapshot.params)
        acc.add(episode_gradients(snapshot, traj, returns, net_cfg, lcfg))
        grads, _ = clip_global_norm(acc.sums, lcfg.grad_clip_norm)
        store.push(grads)
    return sum(outcomes) / n_start


__all__ = [
    "Checkpoint",
    "EnvironmentInstance",
    "PassiveTrainConfig",
    "ProgressLog",
    "TrainResult",
    "TrainRunConfig",
    "TrainSetup",
    "build_instances",
    "select_best",
    "train_active",
    "train_passives",
    "validation_sweep",
    "ConstantSpeedController",
    "PolicyPassiveController",
]
