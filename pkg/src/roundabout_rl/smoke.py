"""Scaled-down end-to-end learning experiment.

A single small roundabout (three entries), a handful of constant-speed
scripted traffic vehicles with bus-sized footprints (visible at the mini
grid resolution), and the miniature network profile. Training uses the
delayed per-episode update rule across the three entry instances; the best
greedy checkpoint (periodic frozen-weights evaluation) is kept and compared
against a uniform-random command baseline on the same seeded traffic.

Runs in minutes on a desktop CPU; used by the acceptance suite and by
``scripts/smoke_learning.py``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .environment import ConstantSpeedController, InsertionEnv, InsertionEnvConfig, RewardConfig
from .evaluation import ExperimentConfig, GreedyPolicy, MetricsReport, RandomPolicy, run_episodes
from .learner import LearnerConfig, ParameterStore, run_episode_update, rollout
from .maps import RoundaboutMap, make_roundabout_map
from .network import NetworkConfig, init_params, mini_network_config
from .noise import NoiseConfig
from .perception import PerceptionConfig
from .seeding import NS_INSTANCE, NS_NETWORK, NS_TRAIN_EPISODE, NS_VALIDATION, derive_rng
from .simulation import EpisodeStatus, SimConfig, VehicleFootprint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmokeConfig:
    seed: int = 0
    train_episodes: int = 6000  # total across the three entry instances
    selection_cadence: int = 500  # episodes between frozen greedy evaluations
    selection_episodes: int = 80
    eval_episodes: int = 500
    max_passives: int = 3
    ring_radius: float = 11.0
    entry_angles: tuple[float, ...] = (0.3, 2.4, 4.4)
    approach_length: float = 14.0
    goal_extension: float = 8.0
    passive_speed_range: tuple[float, float] = (2.8, 3.2)
    passive_footprint: VehicleFootprint = VehicleFootprint(9.0, 4.5)
    window: float = 40.0
    active_target_speed: float = 6.0
    start_speed_range: tuple[float, float] = (2.0, 4.0)
    action_repeat: int = 4
    max_steps_guard: int = 20_000
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)


def make_smoke_map(cfg: SmokeConfig) -> RoundaboutMap:
    return make_roundabout_map(
        "smoke", cfg.ring_radius, list(cfg.entry_angles),
        approach_length=cfg.approach_length,
    )


def smoke_perception(cfg: SmokeConfig) -> PerceptionConfig:
    return PerceptionConfig(grid_n=8, window=cfg.window)


def smoke_network(cfg: SmokeConfig) -> NetworkConfig:
    return mini_network_config(4)


def smoke_env(cfg: SmokeConfig, scenario: RoundaboutMap, entry: int) -> InsertionEnv:
    return InsertionEnv(
        scenario,
        entry,
        env_cfg=InsertionEnvConfig(
            max_passives=cfg.max_passives,
            goal_extension=cfg.goal_extension,
            active_target_speed=cfg.active_target_speed,
            start_speed_range=cfg.start_speed_range,
            passive_speed_range=cfg.passive_speed_range,
            passive_footprint=cfg.passive_footprint,
            action_repeat=cfg.action_repeat,
            max_steps=cfg.max_steps_guard,
        ),
        sim=SimConfig(),
        noise=NoiseConfig.disabled(),
        percep=smoke_perception(cfg),
        reward=cfg.reward,
        passive_controller=ConstantSpeedController(),
    )


def _selection_score(
    cfg: SmokeConfig, scenario, params, net_cfg, sweep_index: int
) -> float:
    env = smoke_env(cfg, scenario, 0)
    reached = 0
    for ep in range(cfg.selection_episodes):
        rng = derive_rng(cfg.seed, NS_VALIDATION, sweep_index, ep)
        try:
            _, status = rollout(env, params, net_cfg, rng, greedy=True)
        except RuntimeError:
            status = EpisodeStatus.RUNNING
        reached += status is EpisodeStatus.REACHED
    return reached / cfg.selection_episodes


@dataclass
class SmokeTrainResult:
    best_params: dict
    best_score: float
    score_history: list[float]
    episodes: int
    seconds: float


def train_smoke_policy(cfg: SmokeConfig) -> SmokeTrainResult:
    """Train across the three entries; keep the best greedy checkpoint."""
    scenario = make_smoke_map(cfg)
    net_cfg = smoke_network(cfg)
    lcfg = cfg.learner
    store = ParameterStore(init_params(net_cfg, derive_rng(cfg.seed, NS_NETWORK)), lcfg)
    envs = [smoke_env(cfg, scenario, e) for e in range(scenario.n_entries)]
    counters = [0] * len(envs)
    best_params, _, _ = store.state()
    best_score = -1.0
    history = []
    t0 = time.time()
    episode = 0
    while episode < cfg.train_episodes:
        idx = episode % len(envs)
        rng = derive_rng(cfg.seed, NS_TRAIN_EPISODE, idx, counters[idx])
        run_episode_update(envs[idx], store, net_cfg, lcfg, rng)
        counters[idx] += 1
        episode += 1
        if episode % cfg.selection_cadence == 0 or episode == cfg.train_episodes:
            params, _, _ = store.state()
            score = _selection_score(cfg, scenario, params, net_cfg, len(history))
            history.append(score)
            if score > best_score:
                best_score = score
                best_params = params
            log.info(
                "smoke training %d/%d episodes: greedy reach %.3f (best %.3f)",
                episode, cfg.train_episodes, score, best_score,
            )
    return SmokeTrainResult(best_params, best_score, history, episode, time.time() - t0)


def evaluate_smoke(cfg: SmokeConfig, policy, n_episodes: int | None = None) -> MetricsReport:
    """Seeded greedy/random evaluation on the smoke scenario, entry 0."""
    scenario = make_smoke_map(cfg)
    env = smoke_env(cfg, scenario, 0)
    exp = ExperimentConfig(
        map_name="smoke", checkpoint=None, n_episodes=n_episodes or cfg.eval_episodes,
        traffic_level="low", seed=cfg.seed, max_passives=cfg.max_passives,
    )
    return run_episodes(env, policy, exp)


@dataclass
class SmokeExperimentResult:
    trained: MetricsReport
    baseline: MetricsReport
    training: SmokeTrainResult


def run_smoke_experiment(cfg: SmokeConfig | None = None) -> SmokeExperimentResult:
    """Train, then evaluate the best checkpoint against the random baseline
    on identical per-episode seeds (identical traffic)."""
    cfg = cfg or SmokeConfig()
    training = train_smoke_policy(cfg)
    trained = evaluate_smoke(cfg, GreedyPolicy(training.best_params, smoke_network(cfg)))
    baseline = evaluate_smoke(cfg, RandomPolicy())
    return SmokeExperimentResult(trained, baseline, training)
