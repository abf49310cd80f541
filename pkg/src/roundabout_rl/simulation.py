"""Discrete-time longitudinal traffic simulation.

Vehicles track their path centerlines exactly (lateral behavior enters only
through injected path noise), so the state per vehicle is an arc-length and
a speed. Integration is semi-implicit Euler at a fixed dt: speed updates
first, then position advances with the new speed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PathPolyline, Point2
from .maps import ScenarioMap


class ContractError(RuntimeError):
    """An operation was called outside its valid lifecycle."""


@dataclass(frozen=True)
class VehicleFootprint:
    """Rectangular footprint, length along the heading."""

    length: float = 4.5
    width: float = 1.8

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"footprint dimensions must be positive: {self}")


class PassiveAction(enum.IntEnum):
    ACCELERATE = 0
    KEEP = 1
    BRAKE = 2


class ActiveCommand(enum.IntEnum):
    PERMITTED = 0
    NOT_PERMITTED = 1
    CAUTION = 2


class EpisodeStatus(enum.Enum):
    RUNNING = "running"
    REACHED = "reached"
    CRASHED = "crashed"

    @property
    def terminal(self) -> bool:
        return self is not EpisodeStatus.RUNNING


class Role(enum.Enum):
    PASSIVE = "passive"
    ACTIVE = "active"


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    accel: float = 1.0  # m/s^2, throttle for both agent kinds
    passive_brake: float = 2.0  # m/s^2 magnitude
    comfort_decel: float = 2.0  # m/s^2 magnitude, active braking
    caution_speed: float = 2.0  # m/s, approach speed under Caution

    def __post_init__(self):
        if self.dt <= 0 or min(self.accel, self.passive_brake, self.comfort_decel) <= 0:
            raise ValueError(f"invalid simulation constants: {self}")


@dataclass
class AgentState:
    """Kinematic and behavioral state of one vehicle."""

    path_id: int
    s: float
    v: float
    target_speed: float
    aggressiveness: float
    role: Role
    footprint: VehicleFootprint = VehicleFootprint()
    goal_s: float = math.inf
    last_command: ActiveCommand = ActiveCommand.NOT_PERMITTED

    def __post_init__(self):
        if self.v < 0 or not 0.0 <= self.aggressiveness <= 1.0 or self.target_speed <= 0:
            raise ValueError(f"invalid agent state: {self}")


def step_passive(state: AgentState, action: PassiveAction, cfg: SimConfig,
                 path: PathPolyline) -> AgentState:
    """Advance a passive vehicle one tick.

    Speed is clamped to [0, target_speed]; position wraps modulo the path
    length on closed loops.
    """
    assert state.role is Role.PASSIVE
    a = {
        PassiveAction.ACCELERATE: cfg.accel,
        PassiveAction.KEEP: 0.0,
        PassiveAction.BRAKE: -cfg.passive_brake,
    }[action]
    v = min(max(state.v + a * cfg.dt, 0.0), state.target_speed)
    s = state.s + v * cfg.dt
    if path.closed:
        s = path.wrap(s)
    else:
        s = s % path.length
    state.v = v
    state.s = s
    return state


def step_active(state: AgentState, cmd: ActiveCommand, cfg: SimConfig) -> AgentState:
    """Advance the inserting vehicle one tick under a command.

    Permitted accelerates up to the target speed, NotPermitted brakes to a
    stop at the comfort limit, and Caution regulates toward the low caution
    speed from either side.
    """
    assert state.role is Role.ACTIVE
    v = state.v
    if cmd is ActiveCommand.PERMITTED:
        v = min(v + cfg.accel * cfg.dt, state.target_speed)
    elif cmd is ActiveCommand.NOT_PERMITTED:
        v = max(v - cfg.comfort_decel * cfg.dt, 0.0)
    else:  # Caution
        if v < cfg.caution_speed:
            v = min(v + cfg.accel * cfg.dt, cfg.caution_speed)
        elif v > cfg.caution_speed:
            v = max(v - cfg.comfort_decel * cfg.dt, cfg.caution_speed)
    v = min(max(v, 0.0), state.target_speed)
    state.v = v
    state.s = state.s + v * cfg.dt
    state.last_command = cmd
    return state


def oriented_rectangle(center: np.ndarray, heading: float,
                       footprint: VehicleFootprint) -> np.ndarray:
    """Corners (4, 2) of a footprint centered at a pose."""
    c, s = math.cos(heading), math.sin(heading)
    fwd = np.array([c, s])
    left = np.array([-s, c])
    hl = footprint.length / 2.0
    hw = footprint.width / 2.0
    return np.array(
        [
            center + hl * fwd + hw * left,
            center + hl * fwd - hw * left,
            center - hl * fwd - hw * left,
            center - hl * fwd + hw * left,
        ]
    )


def rectangles_intersect(ra: np.ndarray, rb: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals (closed overlap)."""
    for rect in (ra, rb):
        for i in range(4):
            edge = rect[(i + 1) % 4] - rect[i]
            axis = np.array([-edge[1], edge[0]])
            pa = ra @ axis
            pb = rb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


@dataclass
class World:
    """Mutable per-episode simulation state, owned by a single worker."""

    scenario: ScenarioMap
    paths: list[PathPolyline]
    active: AgentState | None
    passives: list[AgentState]
    cfg: SimConfig = field(default_factory=SimConfig)
    status: EpisodeStatus = EpisodeStatus.RUNNING
    step_count: int = 0
    passive_contacts: int = 0  # passive-passive contacts, logged only
    _navigable: "PolygonSet | None" = field(default=None, repr=False)

    def navigable_set(self) -> "PolygonSet":
        """Precompiled navigable polygons (built once, lanes included)."""
        if self._navigable is None:
            from .geometry import PolygonSet

            self._navigable = PolygonSet(self.scenario.effective_navigable())
        return self._navigable

    def path_of(self, state: AgentState) -> PathPolyline:
        return self.paths[state.path_id]

    def pose_of(self, state: AgentState) -> tuple[Point2, float]:
        path = self.path_of(state)
        return path.pose_at(min(state.s, path.length))

    def rect_of(self, state: AgentState) -> np.ndarray:
        p, heading = self.pose_of(state)
        return oriented_rectangle(p.as_array(), heading, state.footprint)


def world_pose(state: AgentState, world: World) -> tuple[Point2, float]:
    """World position and heading of an agent on its (possibly noised) path."""
    return world.pose_of(state)


def collision_check(a: AgentState, b: AgentState, world: World) -> bool:
    """True iff the two oriented footprints overlap (separating-axis test)."""
    pa, ha = world.pose_of(a)
    pb, hb = world.pose_of(b)
    # Cheap circle reject before the exact test.
    ra = math.hypot(a.footprint.length, a.footprint.width) / 2.0
    rb = math.hypot(b.footprint.length, b.footprint.width) / 2.0
    if math.hypot(pa.x - pb.x, pa.y - pb.y) > ra + rb:
        return False
    return rectangles_intersect(
        oriented_rectangle(pa.as_array(), ha, a.footprint),
        oriented_rectangle(pb.as_array(), hb, b.footprint),
    )


def spawn_passives(
    scenario: ScenarioMap,
    max_count: int,
    rng: np.random.Generator,
    footprint: VehicleFootprint = VehicleFootprint(),
    target_speed_range: tuple[float, float] = (7.0, 10.0),
) -> tuple[list[AgentState], list[str]]:
    """Place a random number of passives on the scenario's spawn slots.

    Count is uniform in [0, max_count]; chosen slots are distinct, and the
    slot grid guarantees at least 8 m separation along the path. Base target
    speeds are uniform in target_speed_range and scaled by the agent's
    aggressiveness (0.8 + 0.4 * a). Returns the agents plus warning records.
    """
    if max_count < 0:
        raise ValueError("max_count must be >= 0")
    warnings: list[str] = []
    slots = scenario.passive_spawn_points
    count = int(rng.integers(0, max_count + 1))
    if count > len(slots):
        warnings.append(
            f"requested up to {count} passives but only {len(slots)} spawn slots; capped"
        )
        count = len(slots)
    chosen = rng.permutation(len(slots))[:count]
    agents = []
    for idx in sorted(chosen):
        path_id, s = slots[idx]
        base_speed = float(rng.uniform(*target_speed_range))
        aggr = float(rng.uniform(0.0, 1.0))
        target = base_speed * (0.8 + 0.4 * aggr)
        agents.append(
            AgentState(
                path_id=path_id,
                s=s,
                v=target,
                target_speed=target,
                aggressiveness=aggr,
                role=Role.PASSIVE,
                footprint=footprint,
            )
        )
    return agents, warnings


def episode_step(
    world: World,
    active_cmd: ActiveCommand,
    passive_actions: list[PassiveAction],
) -> EpisodeStatus:
    """Advance every agent one tick and resolve the episode status.

    The episode ends Crashed on any active-passive overlap (checked first)
    or Reached once the active agent passes its goal arclength. There is no
    step cap: Reached and Crashed are the only terminal outcomes.
    """
    if world.status.terminal:
        raise ContractError(f"episode_step called on terminal episode ({world.status})")
    if len(passive_actions) != len(world.passives):
        raise ContractError(
            f"{len(passive_actions)} passive actions for {len(world.passives)} passives"
        )
    cfg = world.cfg
    for state, action in zip(world.passives, passive_actions):
        step_passive(state, action, cfg, world.path_of(state))
    if world.active is not None:
        step_active(world.active, active_cmd, cfg)
    world.step_count += 1

    poses = [world.pose_of(p) for p in world.passives]
    radii = [math.hypot(p.footprint.length, p.footprint.width) / 2.0 for p in world.passives]
    rects: list[np.ndarray | None] = [None] * len(world.passives)

    def rect(i: int) -> np.ndarray:
        if rects[i] is None:
            rects[i] = oriented_rectangle(
                poses[i][0].as_array(), poses[i][1], world.passives[i].footprint
            )
        return rects[i]

    for i in range(len(poses)):
        for j in range(i + 1, len(poses)):
            dx = poses[i][0].x - poses[j][0].x
            dy = poses[i][0].y - poses[j][0].y
            if math.hypot(dx, dy) > radii[i] + radii[j]:
                continue
            if rectangles_intersect(rect(i), rect(j)):
                world.passive_contacts += 1
    if world.active is not None:
        a = world.active
        pa, ha = world.pose_of(a)
        ra = math.hypot(a.footprint.length, a.footprint.width) / 2.0
        active_rect = oriented_rectangle(pa.as_array(), ha, a.footprint)
        for i in range(len(poses)):
            if math.hypot(pa.x - poses[i][0].x, pa.y - poses[i][0].y) > ra + radii[i]:
                continue
            if rectangles_intersect(active_rect, rect(i)):
                world.status = EpisodeStatus.CRASHED
                return world.status
        if a.s >= a.goal_s:
            world.status = EpisodeStatus.REACHED
    return world.status
