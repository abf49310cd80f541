"""Experiment protocol: seeded evaluation runs, metrics, and model comparison.

An experiment runs a fixed number of episodes on one scenario at one traffic
level with greedy action selection and per-episode seeds derived from the
experiment seed, so reruns reproduce the per-episode records exactly.
Episodes end only by reaching the goal or crashing; the two rates therefore
sum to one in every report.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .environment import (
    ConstantSpeedController,
    GapKeepingController,
    InsertionEnv,
    InsertionEnvConfig,
    PolicyPassiveController,
    RewardConfig,
)
from .learner import load_checkpoint, rollout, verify_param_shapes
from .maps import JunctionMap, ScenarioMap, resolve_map
from .network import NetworkConfig
from .noise import NoiseConfig
from .perception import PerceptionConfig
from .seeding import NS_EVALUATION, derive_rng
from .simulation import EpisodeStatus, SimConfig

TRAFFIC_LEVELS = ("low", "medium", "high")

#: Passive caps per traffic level for the standard scenarios.
TRAFFIC_TABLE: dict[str, dict[str, int]] = {
    "test_roundabout": {"low": 10, "medium": 15, "high": 20},
    "validation": {"low": 6, "medium": 12, "high": 18},
    "junction": {"low": 2, "medium": 4, "high": 6},
}


def traffic_max_passives(scenario: ScenarioMap, level: str) -> int:
    if level not in TRAFFIC_LEVELS:
        raise ValueError(f"traffic level must be one of {TRAFFIC_LEVELS}, got {level!r}")
    table = TRAFFIC_TABLE.get(scenario.name)
    if table is None:
        table = TRAFFIC_TABLE["junction"] if isinstance(scenario, JunctionMap) else TRAFFIC_TABLE["test_roundabout"]
    return table[level]


@dataclass(frozen=True)
class ExperimentConfig:
    map_name: str = "test_roundabout"
    checkpoint: str | None = None  # inserting-agent weights (.npz)
    passive_checkpoint: str | None = None  # optional trained traffic weights
    n_episodes: int = 3000
    traffic_level: str = "high"
    max_passives: int | None = None  # explicit override of the traffic table
    noise_at_eval: bool = False
    seed: int = 0
    scripted_passives: str = "gap"  # "gap" or "constant" fallback controller
    reshape_junction_each_episode: bool = True
    junction_angle_range: tuple[float, float] = (0.35, 1.2)
    max_steps_guard: int | None = None

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if self.traffic_level not in TRAFFIC_LEVELS:
            raise ValueError(f"unknown traffic level {self.traffic_level!r}")


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    outcome: str  # "reached" | "crashed"
    steps: int
    reward: float


@dataclass(frozen=True)
class MetricsReport:
    """Aggregated experiment outcome.

    crashes_pct is derived as 1 - reaches_pct (the outcomes are mutually
    exclusive and exhaustive), so the identity holds exactly. total_steps is
    the mean episode length; the raw sum is kept alongside.
    """

    n_episodes: int
    reaches_pct: float
    crashes_pct: float
    total_steps: float
    steps_sum: int
    records: tuple[EpisodeRecord, ...] = field(repr=False, default=())

    @staticmethod
    def from_records(records: list[EpisodeRecord]) -> "MetricsReport":
        if not records:
            raise ValueError("no episode records")
        n = len(records)
        reached = sum(1 for r in records if r.outcome == "reached")
        steps_sum = sum(r.steps for r in records)
        reaches = reached / n
        return MetricsReport(
            n_episodes=n,
            reaches_pct=reaches,
            crashes_pct=1.0 - reaches,
            total_steps=steps_sum / n,
            steps_sum=steps_sum,
            records=tuple(records),
        )


class GreedyPolicy:
    """Deterministic argmax over the policy head."""

    def __init__(self, params, net_cfg: NetworkConfig):
        from .network import forward

        self._forward = forward
        self.params = params
        self.net_cfg = net_cfg

    def __call__(self, obs, rng) -> int:
        _, policy = self._forward(
            self.params, self.net_cfg, obs.frames.astype(float), obs.nonvisual
        )
        return int(np.argmax(policy))


class RandomPolicy:
    """Uniform draw over the three commands (baseline)."""

    def __init__(self, n_actions: int = 3):
        self.n_actions = n_actions

    def __call__(self, obs, rng) -> int:
        return int(rng.integers(0, self.n_actions))


def build_eval_env(
    cfg: ExperimentConfig,
    scenario: ScenarioMap | None = None,
    sim: SimConfig | None = None,
    percep: PerceptionConfig | None = None,
    env_cfg: InsertionEnvConfig | None = None,
    passive_net: tuple | None = None,  # (params, net_cfg) for policy passives
    entry_index: int = 0,
) -> InsertionEnv:
    scenario = scenario or resolve_map(cfg.map_name)
    max_passives = cfg.max_passives
    if max_passives is None:
        max_passives = traffic_max_passives(scenario, cfg.traffic_level)
    base_env_cfg = env_cfg or InsertionEnvConfig()
    from dataclasses import replace

    angle_range = None
    if isinstance(scenario, JunctionMap) and cfg.reshape_junction_each_episode:
        angle_range = cfg.junction_angle_range
    base_env_cfg = replace(
        base_env_cfg,
        max_passives=max_passives,
        junction_angle_range=angle_range,
        max_steps=cfg.max_steps_guard,
    )
    if passive_net is not None:
        controller = PolicyPassiveController(*passive_net, percep or PerceptionConfig())
    elif cfg.scripted_passives == "constant":
        controller = ConstantSpeedController()
    else:
        controller = GapKeepingController()
    noise = NoiseConfig() if cfg.noise_at_eval else NoiseConfig.disabled()
    return InsertionEnv(
        scenario,
        entry_index,
        env_cfg=base_env_cfg,
        sim=sim or SimConfig(),
        noise=noise,
        percep=percep or PerceptionConfig(),
        reward=RewardConfig(),
        passive_controller=controller,
    )


def run_episodes(env: InsertionEnv, policy, cfg: ExperimentConfig) -> MetricsReport:
    """Run the experiment's episodes with per-episode derived seeds."""
    records = []
    for ep in range(cfg.n_episodes):
        rng = derive_rng(cfg.seed, NS_EVALUATION, ep)
        obs = env.reset(rng)
        done = False
        total_reward = 0.0
        status = EpisodeStatus.RUNNING
        while not done:
            action = policy(obs, rng)
            obs, reward, done, info = env.step(action)
            total_reward += reward
            if done:
                status = info["status"]
        records.append(
            EpisodeRecord(ep, status.value, env.world.step_count, total_reward)
        )
    return MetricsReport.from_records(records)


def run_experiment(
    cfg: ExperimentConfig,
    net_cfg: NetworkConfig | None = None,
    percep: PerceptionConfig | None = None,
    env_cfg: InsertionEnvConfig | None = None,
    policy=None,
) -> MetricsReport:
    """Full protocol: load the checkpoint, build the environment, evaluate.

    Action selection is greedy (argmax); pass an explicit policy callable to
    override (e.g. the uniform-random baseline).
    """
    percep = percep or PerceptionConfig()
    passive_net = None
    if cfg.passive_checkpoint:
        from .network import passive_network_config

        pk = load_checkpoint(cfg.passive_checkpoint)
        pcfg = passive_network_config(percep.grid_n, percep.n_frames)
        verify_param_shapes(pk.params, pcfg)
        passive_net = (pk.params, pcfg)
    if policy is None:
        if cfg.checkpoint is None:
            raise ValueError("an experiment needs a checkpoint or an explicit policy")
        from .network import active_network_config

        ckpt = load_checkpoint(cfg.checkpoint)
        net_cfg = net_cfg or active_network_config(percep.grid_n, percep.n_frames)
        verify_param_shapes(ckpt.params, net_cfg)
        policy = GreedyPolicy(ckpt.params, net_cfg)
    env = build_eval_env(cfg, percep=percep, env_cfg=env_cfg, passive_net=passive_net)
    return run_episodes(env, policy, cfg)


def average_over_levels(reports: list[MetricsReport]) -> MetricsReport:
    """Mean of the three traffic-level reports (low, medium, high)."""
    if len(reports) != 3:
        raise ValueError(f"expected exactly 3 reports (low, medium, high), got {len(reports)}")
    reaches = sum(r.reaches_pct for r in reports) / 3.0
    records = tuple(rec for r in reports for rec in r.records)
    return MetricsReport(
        n_episodes=sum(r.n_episodes for r in reports),
        reaches_pct=reaches,
        crashes_pct=1.0 - reaches,
        total_steps=sum(r.total_steps for r in reports) / 3.0,
        steps_sum=sum(r.steps_sum for r in reports),
        records=records,
    )


# ---------------------------------------------------------------------------
# Comparison tables and report files
# ---------------------------------------------------------------------------

_ROWS = (("Reaches %", "reaches_pct"), ("Crashes %", "crashes_pct"), ("Total Steps", "total_steps"))


@dataclass(frozen=True)
class ComparisonTable:
    """Side-by-side metric table, one column per model."""

    models: tuple[str, ...]
    rows: tuple[tuple[str, tuple[float, ...]], ...]

    def to_csv(self) -> str:
        lines = ["," + ",".join(self.models)]
        for label, values in self.rows:
            lines.append(label + "," + ",".join(f"{v:.3f}" for v in values))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(m) for m in self.models + ("",)) + 2
        label_w = max(len(r[0]) for r in self.rows) + 2
        out = [" " * label_w + "".join(m.rjust(width) for m in self.models)]
        for label, values in self.rows:
            out.append(label.ljust(label_w) + "".join(f"{v:.3f}".rjust(width) for v in values))
        return "\n".join(out) + "\n"


def compare_models(reports: dict[str, MetricsReport]) -> ComparisonTable:
    if len(reports) < 2:
        raise ValueError("comparison needs at least two models")
    models = tuple(reports)
    rows = tuple(
        (label, tuple(getattr(reports[m], attr) for m in models)) for label, attr in _ROWS
    )
    return ComparisonTable(models, rows)


def write_episode_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "outcome", "steps", "return"])
        for r in report.records:
            w.writerow([r.index, r.outcome, r.steps, f"{r.reward:.6f}"])


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_summary_json(
    report: MetricsReport, cfg: ExperimentConfig, path: str | Path
) -> None:
    from dataclasses import asdict

    summary = {
        "metrics": {
            "n_episodes": report.n_episodes,
            "reaches_pct": report.reaches_pct,
            "crashes_pct": report.crashes_pct,
            "total_steps": report.total_steps,
            "steps_sum": report.steps_sum,
        },
        "config": asdict(cfg),
        "seed": cfg.seed,
        "checkpoint_sha256": file_sha256(cfg.checkpoint) if cfg.checkpoint else None,
    }
    Path(path).write_text(json.dumps(summary, indent=1), encoding="utf-8")
