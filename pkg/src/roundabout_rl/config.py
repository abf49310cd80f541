"""Run configuration: one dataclass tree, JSON in, JSON out.

A run config aggregates every knob of the system. It serializes to a JSON
document and back without loss, and individual values can be overridden
with dotted ``key=value`` strings (CLI ``--set`` flags). The resolved config
echoed into a run directory is itself a valid config file.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .environment import InsertionEnvConfig, RewardConfig
from .learner import LearnerConfig
from .network import NetworkConfig, active_network_config, mini_network_config, passive_network_config
from .noise import NoiseConfig
from .orchestrator import PassiveTrainConfig, TrainRunConfig
from .perception import PerceptionConfig
from .simulation import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    out_root: str = "runs"
    network_profile: str = "full"  # "full" (84x84 grids) or "mini" (8x8 grids)
    sim: SimConfig = field(default_factory=SimConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: InsertionEnvConfig = field(default_factory=InsertionEnvConfig)
    train: TrainRunConfig = field(default_factory=TrainRunConfig)
    passive_train: PassiveTrainConfig = field(default_factory=PassiveTrainConfig)

    def __post_init__(self):
        if self.network_profile not in ("full", "mini"):
            raise ConfigError(f"network_profile must be 'full' or 'mini', got {self.network_profile!r}")
        if self.network_profile == "mini" and self.perception.grid_n != 8:
            raise ConfigError("the mini network profile requires perception.grid_n = 8")

    def active_network(self) -> NetworkConfig:
        if self.network_profile == "mini":
            return mini_network_config(4, self.perception.n_frames)
        return active_network_config(self.perception.grid_n, self.perception.n_frames)

    def passive_network(self) -> NetworkConfig:
        if self.network_profile == "mini":
            return mini_network_config(3, self.perception.n_frames)
        return passive_network_config(self.perception.grid_n, self.perception.n_frames)


def _coerce(value, hint):
    """Rebuild a dataclass tree from plain JSON values, honoring type hints."""
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0])
    if dataclasses.is_dataclass(hint):
        if isinstance(value, hint):
            return value
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object for {hint.__name__}, got {value!r}")
        hints = typing.get_type_hints(hint)
        kwargs = {}
        for f in dataclasses.fields(hint):
            if f.name in value:
                kwargs[f.name] = _coerce(value[f.name], hints[f.name])
        unknown = set(value) - {f.name for f in dataclasses.fields(hint)}
        if unknown:
            raise ConfigError(f"unknown field(s) {sorted(unknown)} for {hint.__name__}")
        return hint(**kwargs)
    if origin is tuple:
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0]) for v in value)
        return tuple(_coerce(v, a) for v, a in zip(value, args))
    if hint is float and isinstance(value, (int, float)):
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}")
        return value
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(doc: dict) -> RunConfig:
    return _coerce(doc, RunConfig)


def load_config(path: str | Path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(doc)


def dump_config(cfg: RunConfig, path: str | Path | None = None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=1)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply dotted key=value overrides (values parsed as JSON when possible)."""
    doc = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = dotted.split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config group {p!r} in {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
    return config_from_dict(doc)
