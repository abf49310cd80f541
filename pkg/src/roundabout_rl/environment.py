"""Episode environments gluing simulation, perception and noise together.

InsertionEnv drives one inserting agent from an entry lane into the traffic
stream, producing the stacked visual input and the scalar feature vector at
every step. PassiveTrainingEnv runs a crowd of learning passives on one
scenario for the multi-agent training stage.

Both follow the usual reset/step shape: reset(rng) returns the first
observation, step(action) returns (observation, reward, done, info).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .geometry import PathPolyline, concat_paths
from .maps import JunctionMap, ScenarioMap, make_junction_map, merge_arclength
from .noise import NoiseConfig, PerceivedVehicle, maybe_reshape, perturb_path_bezier, perturb_perception
from .perception import (
    ACTIVE_CHANNELS,
    FrameStack,
    ObserverFrame,
    PerceptionConfig,
    build_frame_stack,
    cell_centers_world,
    encode_nonvisual,
    rasterize_navigable,
    rasterize_obstacles,
    rasterize_path,
    rasterize_stopline,
)
from .simulation import (
    ActiveCommand,
    AgentState,
    EpisodeStatus,
    PassiveAction,
    Role,
    SimConfig,
    VehicleFootprint,
    World,
    episode_step,
    spawn_passives,
)


@dataclass(frozen=True)
class RewardConfig:
    """Reward shaping for both agent kinds.

    The inserting agent gets the terminal bonus/penalty, a small per-step
    cost (there is no episode time limit, so the cost supplies the pressure
    to finish), and a penalty on command switches to discourage chattering
    output. Passives get the terminal bonus/penalty plus a per-step cost on
    deviation from their target speed.
    """

    reach_bonus: float = 1.0
    crash_penalty: float = -1.0
    step_cost: float = -0.001
    switch_cost: float = -0.05
    passive_speed_cost: float = 0.002


@dataclass(frozen=True)
class Observation:
    frames: np.ndarray  # (n_frames * channels, n, n) uint8
    nonvisual: np.ndarray  # (d,) float in [0, 1]


def perceived_truth(
    states: list[AgentState], paths: list[PathPolyline]
) -> list[PerceivedVehicle]:
    """Ground-truth vehicle boxes (the noise-free perception channel)."""
    out = []
    for st in states:
        path = paths[st.path_id]
        p, heading = path.pose_at(min(st.s, path.length))
        out.append(PerceivedVehicle(p, heading, st.footprint, True))
    return out


class PassiveControllerProtocol(Protocol):
    def reset(self, world: World, rng: np.random.Generator) -> None: ...

    def actions(self, world: World, rng: np.random.Generator) -> list[PassiveAction]: ...


class ConstantSpeedController:
    """Scripted passives that always hold their spawn speed."""

    def reset(self, world, rng):
        pass

    def actions(self, world, rng):
        return [PassiveAction.KEEP] * len(world.passives)


class GapKeepingController:
    """Scripted passives with a one-rule car-following behavior.

    Brake when the gap to the vehicle ahead on the same path falls below the
    safety gap, otherwise accelerate back toward the target speed.
    """

    def __init__(self, safety_gap: float = 9.0):
        self.safety_gap = safety_gap

    def reset(self, world, rng):
        pass

    def actions(self, world, rng):
        acts = []
        for i, me in enumerate(world.passives):
            path = world.path_of(me)
            gap = math.inf
            for j, other in enumerate(world.passives):
                if j == i or other.path_id != me.path_id:
                    continue
                ahead = (other.s - me.s) % path.length
                gap = min(gap, ahead)
            if gap < self.safety_gap:
                acts.append(PassiveAction.BRAKE)
            elif me.v < me.target_speed:
                acts.append(PassiveAction.ACCELERATE)
            else:
                acts.append(PassiveAction.KEEP)
        return acts


class PolicyPassiveController:
    """Passives driven by a frozen trained policy (sampled per step).

    Each passive keeps its own frame history; its obstacle layer contains
    every other vehicle, the inserting agent included, seen without noise.
    """

    def __init__(self, params, net_cfg, percep: PerceptionConfig, greedy: bool = False):
        from .network import forward, sample_action  # heavy import kept local

        self._forward = forward
        self._sample = sample_action
        self.params = params
        self.net_cfg = net_cfg
        self.percep = percep
        self.greedy = greedy
        self._histories: list[list] = []
        self._anchors: list[float] = []

    def reset(self, world, rng):
        self._histories = [[] for _ in world.passives]
        self._anchors = [p.s for p in world.passives]

    def actions(self, world, rng):
        acts = []
        all_states = list(world.passives) + ([world.active] if world.active else [])
        for i, me in enumerate(world.passives):
            path = world.path_of(me)
            pos, heading = world.pose_of(me)
            frame = ObserverFrame.from_pose(pos, heading)
            others = perceived_truth(
                [s for s in all_states if s is not me], world.paths
            )
            route = path.sub_path_wrapped(me.s, min(30.0, path.length * 0.45))
            layers = (
                rasterize_obstacles(frame, others, self.percep),
                rasterize_path(frame, route.vertices, 1.75, self.percep),
                rasterize_navigable(frame, world.navigable_set(), self.percep),
            )
            self._histories[i].append(layers)
            stack = build_frame_stack(self._histories[i], self.percep)
            lap_left = (self._anchors[i] - me.s) % path.length
            nv = encode_nonvisual(
                me, self.percep, distance_to_goal=lap_left, goal_length=path.length
            )
            _, policy = self._forward(
                self.params, self.net_cfg, stack.to_array().astype(float), nv.to_array()
            )
            if self.greedy:
                acts.append(PassiveAction(int(np.argmax(policy))))
            else:
                acts.append(PassiveAction(self._sample(policy, rng)))
        return acts


def build_active_path(
    scenario: ScenarioMap, entry_index: int, goal_extension: float, margin: float = 15.0
) -> tuple[PathPolyline, float]:
    """Compose the insertion route: entry lane, then along the traffic path.

    Returns the route and the goal arclength on it (goal_extension meters
    past the merge point; the route itself continues margin meters further
    so terminal poses stay on the path).
    """
    lane = scenario.entry_lanes[entry_index]
    pi, merge_s = merge_arclength(scenario, entry_index)
    traffic = scenario.traffic_paths()[pi]
    ext = goal_extension + margin
    if traffic.closed:
        cont = traffic.sub_path_wrapped(merge_s, ext)
    else:
        cont = traffic.sub_path(merge_s, min(merge_s + ext, traffic.length))
    route = concat_paths(lane.centerline, cont)
    return route, lane.centerline.length + goal_extension


@dataclass(frozen=True)
class InsertionEnvConfig:
    max_passives: int = 6
    goal_extension: float = 20.0
    active_target_speed: float = 8.0
    start_speed_range: tuple[float, float] = (2.0, 5.0)
    passive_speed_range: tuple[float, float] = (7.0, 10.0)
    passive_footprint: VehicleFootprint = VehicleFootprint()
    active_footprint: VehicleFootprint = VehicleFootprint()
    #: junction evaluation resamples the merge angle each episode in this range
    junction_angle_range: tuple[float, float] | None = None
    #: simulation ticks each command is held for (frame-skip); rewards
    #: accumulate over the held ticks and metrics still count ticks
    action_repeat: int = 1
    #: operator guard against non-terminating policies; never a metric
    max_steps: int | None = None


class InsertionEnv:
    """One inserting agent entering one scenario from one entry lane."""

    def __init__(
        self,
        scenario: ScenarioMap,
        entry_index: int,
        env_cfg: InsertionEnvConfig | None = None,
        sim: SimConfig | None = None,
        noise: NoiseConfig | None = None,
        percep: PerceptionConfig | None = None,
        reward: RewardConfig | None = None,
        passive_controller: PassiveControllerProtocol | None = None,
    ):
        if not 0 <= entry_index < scenario.n_entries:
            raise ValueError(
                f"entry {entry_index} out of range for {scenario.name} "
                f"({scenario.n_entries} entries)"
            )
        self.base_scenario = scenario
        self.entry_index = entry_index
        self.cfg = env_cfg or InsertionEnvConfig()
        self.sim = sim or SimConfig()
        self.noise = noise or NoiseConfig.disabled()
        self.percep = percep or PerceptionConfig()
        self.reward = reward or RewardConfig()
        self.controller = passive_controller or GapKeepingController()
        self.episode_index = -1
        self.world: World | None = None
        self.spawn_warnings: list[str] = []
        self._history: list = []
        self._rng: np.random.Generator | None = None
        self._scenario = scenario

    @property
    def scenario(self) -> ScenarioMap:
        return self._scenario

    def reset(self, rng: np.random.Generator) -> Observation:
        self.episode_index += 1
        self._rng = rng
        scenario = self.base_scenario
        if self.cfg.junction_angle_range is not None and isinstance(scenario, JunctionMap):
            angle = float(rng.uniform(*self.cfg.junction_angle_range))
            scenario = make_junction_map(scenario.name, junction_angle=angle)
        scenario = maybe_reshape(self.episode_index, scenario, self.noise, rng)
        self._scenario = scenario

        route, goal_s = build_active_path(scenario, self.entry_index, self.cfg.goal_extension)
        if self.noise.localization_enabled:
            route = perturb_path_bezier(route, self.noise, rng)
        passives, warnings = spawn_passives(
            scenario,
            self.cfg.max_passives,
            rng,
            footprint=self.cfg.passive_footprint,
            target_speed_range=self.cfg.passive_speed_range,
        )
        self.spawn_warnings = warnings
        active = AgentState(
            path_id=len(scenario.traffic_paths()),
            s=0.0,
            v=float(rng.uniform(*self.cfg.start_speed_range)),
            target_speed=self.cfg.active_target_speed,
            aggressiveness=float(rng.uniform(0.0, 1.0)),
            role=Role.ACTIVE,
            footprint=self.cfg.active_footprint,
            goal_s=goal_s,
        )
        self.world = World(
            scenario=scenario,
            paths=list(scenario.traffic_paths()) + [route],
            active=active,
            passives=passives,
            cfg=self.sim,
        )
        self.controller.reset(self.world, rng)
        self._history = []
        return self._observe()

    def _observe(self) -> Observation:
        world = self.world
        active = world.active
        pos, heading = world.pose_of(active)
        frame = ObserverFrame.from_pose(pos, heading)
        perceived = perturb_perception(world.passives, world.paths, self.noise, self._rng)
        route = world.path_of(active)
        fwd = route.sub_vertices(
            min(active.s, active.goal_s), min(active.goal_s, route.length)
        )
        lane_width = self.scenario.entry_lanes[self.entry_index].width
        cells = cell_centers_world(frame, self.percep)
        layers = (
            rasterize_obstacles(frame, perceived, self.percep, cells),
            rasterize_path(frame, fwd, lane_width / 2.0, self.percep, cells),
            rasterize_navigable(frame, world.navigable_set(), self.percep, cells),
            rasterize_stopline(
                frame, self.scenario.stop_lines[self.entry_index], self.percep, cells
            ),
        )
        assert tuple(l.channel for l in layers) == ACTIVE_CHANNELS
        self._history.append(layers)
        stack = build_frame_stack(self._history, self.percep)
        nonvis = encode_nonvisual(active, self.percep)
        return Observation(stack.to_array(), nonvis.to_array())

    def step(self, action: int | ActiveCommand) -> tuple[Observation, float, bool, dict]:
        """Hold the command for action_repeat ticks, accumulating reward."""
        world = self.world
        if world is None:
            raise RuntimeError("call reset() before step()")
        cmd = ActiveCommand(action)
        switched = cmd is not world.active.last_command
        reward = 0.0
        if switched:
            reward += self.reward.switch_cost
        status = world.status
        for _ in range(max(1, self.cfg.action_repeat)):
            passive_actions = self.controller.actions(world, self._rng)
            status = episode_step(world, cmd, passive_actions)
            reward += self.reward.step_cost
            if status.terminal:
                break
        if status is EpisodeStatus.REACHED:
            reward += self.reward.reach_bonus
        elif status is EpisodeStatus.CRASHED:
            reward += self.reward.crash_penalty
        done = status.terminal
        if (
            not done
            and self.cfg.max_steps is not None
            and world.step_count >= self.cfg.max_steps
        ):
            raise RuntimeError(
                f"episode exceeded the max_steps guard ({self.cfg.max_steps}); "
                "the policy may never terminate"
            )
        obs = self._observe()
        info = {"status": status, "steps": world.step_count, "warnings": self.spawn_warnings}
        return obs, reward, done, info


# ---------------------------------------------------------------------------
# Multi-agent passive training environment
# ---------------------------------------------------------------------------


@dataclass
class PassiveTransition:
    agent: int
    obs: Observation
    reward: float
    done: bool
    reached: bool
    truncated: bool


class PassiveTrainingEnv:
    """All passives on one scenario learn simultaneously with a shared policy.

    Each agent's episode ends when it completes one lap of its path (reached)
    or collides with another passive (crashed); finished vehicles are removed
    from the world. The world round ends when every agent is done or the
    horizon truncates the stragglers.
    """

    def __init__(
        self,
        scenario: ScenarioMap,
        max_passives: int,
        sim: SimConfig | None = None,
        percep: PerceptionConfig | None = None,
        reward: RewardConfig | None = None,
        horizon: int = 3000,
    ):
        self.scenario = scenario
        self.max_passives = max_passives
        self.sim = sim or SimConfig()
        self.percep = percep or PerceptionConfig()
        self.reward = reward or RewardConfig()
        self.horizon = horizon
        self.world: World | None = None
        self.progress: list[float] = []
        self.lap_length: list[float] = []
        self._histories: list[list] = []

    def reset(self, rng: np.random.Generator) -> list[Observation]:
        while True:
            passives, _ = spawn_passives(self.scenario, self.max_passives, rng)
            if passives:
                break
        # Learners start below cruise speed so speed control is exercised.
        for p in passives:
            p.v = 0.5 * p.target_speed
        self.world = World(
            scenario=self.scenario,
            paths=list(self.scenario.traffic_paths()),
            active=None,
            passives=passives,
            cfg=self.sim,
        )
        self.progress = [0.0 for _ in passives]
        self.lap_length = [self.world.path_of(p).length for p in passives]
        self._histories = [[] for _ in passives]
        return [self._observe(i) for i in range(len(passives))]

    @property
    def n_agents(self) -> int:
        return len(self.world.passives)

    def _observe(self, i: int) -> Observation:
        world = self.world
        me = world.passives[i]
        path = world.path_of(me)
        pos, heading = world.pose_of(me)
        frame = ObserverFrame.from_pose(pos, heading)
        others = perceived_truth(
            [p for j, p in enumerate(world.passives) if j != i], world.paths
        )
        route = path.sub_path_wrapped(me.s, min(30.0, path.length * 0.45))
        layers = (
            rasterize_obstacles(frame, others, self.percep),
            rasterize_path(frame, route.vertices, 1.75, self.percep),
            rasterize_navigable(frame, world.navigable_set(), self.percep),
        )
        self._histories[i].append(layers)
        stack = build_frame_stack(self._histories[i], self.percep)
        remaining = max(self.lap_length[i] - self.progress[i], 0.0)
        nonvis = encode_nonvisual(
            me, self.percep, distance_to_goal=remaining, goal_length=self.lap_length[i]
        )
        return Observation(stack.to_array(), nonvis.to_array())

    def step(self, actions: list[PassiveAction]) -> list[PassiveTransition]:
        """Advance every live agent one tick; returns one transition each.

        Agents flagged done in the returned transitions are removed before
        the next step, so subsequent action lists must shrink accordingly.
        """
        world = self.world
        if len(actions) != len(world.passives):
            raise ValueError(f"{len(actions)} actions for {len(world.passives)} agents")
        from .simulation import collision_check, step_passive

        for i, (st, action) in enumerate(zip(world.passives, actions)):
            old_s = st.s
            step_passive(st, PassiveAction(action), self.sim, world.path_of(st))
            self.progress[i] += (st.s - old_s) % world.path_of(st).length
        world.step_count += 1
        crashed = set()
        for i in range(len(world.passives)):
            for j in range(i + 1, len(world.passives)):
                if collision_check(world.passives[i], world.passives[j], world):
                    crashed.update((i, j))
                    world.passive_contacts += 1
        out = []
        truncate = world.step_count >= self.horizon
        for i, st in enumerate(world.passives):
            reached = self.progress[i] >= self.lap_length[i]
            is_crashed = i in crashed
            done = reached or is_crashed or truncate
            r = -self.reward.passive_speed_cost * abs(st.v - st.target_speed)
            if is_crashed:
                r += self.reward.crash_penalty
            elif reached:
                r += self.reward.reach_bonus
            out.append(
                PassiveTransition(
                    agent=i,
                    obs=self._observe(i),
                    reward=r,
                    done=done,
                    reached=reached and not is_crashed,
                    truncated=truncate and not reached and not is_crashed,
                )
            )
        keep = [i for i in range(len(world.passives)) if not out[i].done]
        world.passives = [world.passives[i] for i in keep]
        self.progress = [self.progress[i] for i in keep]
        self.lap_length = [self.lap_length[i] for i in keep]
        self._histories = [self._histories[i] for i in keep]
        return out
