"""Uncertainty injection for sim-to-real robustness.

Three mechanisms, each independently switchable:

* perception noise: Gaussian jitter on the position, size and heading of
  every passive vehicle as seen by the inserting agent, plus per-step
  Bernoulli detection dropout;
* localization noise: a smooth perpendicular perturbation of the inserting
  agent's path, built from per-span cubic Bezier offset profiles;
* lane reshaping: periodic rebending of the entry lanes so the navigable
  space changes during training.

All draws flow through the caller-supplied generator in a fixed order, so a
run is reproducible from its master seed, and zero-magnitude settings still
consume the same draws (streams stay aligned across configs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PathPolyline, Point2, reshape_entry_lane
from .maps import ScenarioMap
from .simulation import AgentState, VehicleFootprint

#: Perceived footprint dimensions never shrink below this after perturbation.
MIN_PERCEIVED_SIZE = 0.5


@dataclass(frozen=True)
class NoiseConfig:
    sigma_pos: float = 0.3  # m, position jitter per axis
    sigma_size: float = 0.2  # m, footprint jitter per dimension
    sigma_heading: float = 0.05  # rad
    p_dropout: float = 0.05  # per passive per step
    path_magnitude: float = 1.5  # m, perpendicular path perturbation
    reshape_magnitude: float = 2.0  # m, entry-lane control displacement
    reshape_period: int = 1000  # episodes
    perception_enabled: bool = True
    localization_enabled: bool = True
    reshape_enabled: bool = True

    def __post_init__(self):
        if min(self.sigma_pos, self.sigma_size, self.sigma_heading) < 0:
            raise ValueError(f"noise sigmas must be >= 0: {self}")
        if not 0.0 <= self.p_dropout <= 1.0:
            raise ValueError(f"p_dropout must be in [0, 1]: {self.p_dropout}")
        if self.reshape_period < 1:
            raise ValueError("reshape_period must be >= 1")

    @staticmethod
    def disabled() -> "NoiseConfig":
        return NoiseConfig(
            perception_enabled=False, localization_enabled=False, reshape_enabled=False
        )


@dataclass(frozen=True)
class PerceivedVehicle:
    """One passive vehicle as seen through the noisy perception channel."""

    center: Point2
    heading: float
    footprint: VehicleFootprint
    detected: bool = True


def perturb_perception(
    states: list[AgentState],
    paths: list[PathPolyline],
    cfg: NoiseConfig,
    rng: np.random.Generator,
) -> list[PerceivedVehicle]:
    """Noisy view of the passive traffic.

    Undetected vehicles stay in the returned list with detected=False; they
    are omitted from the obstacle layer but remain physically present for
    collision purposes. With noise disabled the output equals ground truth.
    """
    out = []
    for state in states:
        path = paths[state.path_id]
        p, heading = path.pose_at(min(state.s, path.length))
        if cfg.perception_enabled:
            dx, dy = rng.normal(0.0, cfg.sigma_pos, size=2)
            dl, dw = rng.normal(0.0, cfg.sigma_size, size=2)
            dh = rng.normal(0.0, cfg.sigma_heading)
            detected = bool(rng.random() >= cfg.p_dropout)
            fp = VehicleFootprint(
                max(state.footprint.length + dl, MIN_PERCEIVED_SIZE),
                max(state.footprint.width + dw, MIN_PERCEIVED_SIZE),
            )
            out.append(
                PerceivedVehicle(Point2(p.x + dx, p.y + dy), heading + dh, fp, detected)
            )
        else:
            out.append(PerceivedVehicle(p, heading, state.footprint, True))
    return out


@dataclass(frozen=True)
class OffsetSpan:
    """Perpendicular offset profile over one span of a path.

    The offset at normalized position u in [0, 1] along the span is the
    cubic Bezier profile with control offsets (0, c1, c2, 0):

        d(u) = 3 c1 u (1-u)^2 + 3 c2 u^2 (1-u)

    so the span endpoints stay exactly on the original path.
    """

    s0: float
    s1: float
    c1: float
    c2: float

    @property
    def length(self) -> float:
        return self.s1 - self.s0

    def offset(self, u: float | np.ndarray) -> float | np.ndarray:
        return 3.0 * self.c1 * u * (1.0 - u) ** 2 + 3.0 * self.c2 * u**2 * (1.0 - u)

    def end_slope(self) -> float:
        """d/ds of the offset at the span end (per meter of arc-length)."""
        return -3.0 * self.c2 / self.length

    def start_slope(self) -> float:
        return 3.0 * self.c1 / self.length


def sample_offset_spans(
    total_length: float,
    magnitude: float,
    rng: np.random.Generator,
    span_target: float = 20.0,
) -> list[OffsetSpan]:
    """Draw a chain of offset profiles with matching slopes at the joints.

    Interior control offsets are uniform in [-magnitude, +magnitude]; each
    span's leading control is pinned to the previous span's trailing control
    so the composite displacement is C1 across joints.
    """
    m = max(1, round(total_length / span_target))
    bounds = [total_length * i / m for i in range(m + 1)]
    spans = []
    c1 = float(rng.uniform(-magnitude, magnitude))
    for k in range(m):
        c2 = float(rng.uniform(-magnitude, magnitude))
        spans.append(OffsetSpan(bounds[k], bounds[k + 1], c1, c2))
        # Slope continuity: 3*c1_next/L_next == -3*c2/L  =>  c1_next = -c2*L_next/L
        if k + 1 < m:
            l_cur = bounds[k + 1] - bounds[k]
            l_next = bounds[k + 2] - bounds[k + 1]
            c1 = -c2 * (l_next / l_cur)
    return spans


def apply_offset_profile(
    original: PathPolyline, spans: list[OffsetSpan], max_segment: float = 1.0
) -> PathPolyline:
    """Displace a path sideways by the given offset profiles.

    The path is first refined so the displacement field is sampled densely
    enough; each vertex then moves along its local left normal by the profile
    value at its arc-length. Zero offsets reproduce the original geometry.
    """
    refined = original.refined(max_segment)
    v = refined.vertices.copy()
    cum = refined.cumulative_arclength
    d = np.diff(refined.vertices, axis=0)
    seg_n = np.stack([-d[:, 1], d[:, 0]], axis=1)
    seg_n /= np.linalg.norm(seg_n, axis=1, keepdims=True)
    normals = np.empty_like(v)
    normals[0] = seg_n[0]
    normals[-1] = seg_n[-1]
    if len(v) > 2:
        avg = seg_n[:-1] + seg_n[1:]
        norms = np.linalg.norm(avg, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        normals[1:-1] = avg / norms
    offsets = np.zeros(len(v))
    for span in spans:
        mask = (cum >= span.s0) & (cum <= span.s1)
        u = (cum[mask] - span.s0) / span.length
        offsets[mask] = span.offset(u)
    return PathPolyline(v + offsets[:, None] * normals)


def perturb_path_bezier(
    original: PathPolyline, cfg: NoiseConfig, rng: np.random.Generator
) -> PathPolyline:
    """Smoothly displaced copy of a path, mimicking localization drift.

    Global endpoints are preserved exactly and the perpendicular deviation is
    bounded by 0.75 * path_magnitude (the peak of the offset profile). With
    localization noise disabled the original object is returned.
    """
    if original.length < 10.0:
        raise ValueError(f"path too short to perturb ({original.length:.2f} m < 10 m)")
    if not cfg.localization_enabled:
        return original
    spans = sample_offset_spans(original.length, cfg.path_magnitude, rng)
    return apply_offset_profile(original, spans)


def maybe_reshape(
    episode_index: int, scenario: ScenarioMap, cfg: NoiseConfig, rng: np.random.Generator
) -> ScenarioMap:
    """Reshape every entry lane when the episode counter hits the period.

    Triggered at episode_index % reshape_period == 0 (so a fresh run starts
    from a reshaped variant); otherwise the scenario is returned unchanged.
    Stop lines and lane endpoints are untouched; the navigable lane bands
    follow the new centerlines automatically.
    """
    if episode_index < 0:
        raise ValueError("episode_index must be >= 0")
    if not cfg.reshape_enabled or episode_index % cfg.reshape_period != 0:
        return scenario
    lanes = [
        reshape_entry_lane(lane, rng, cfg.reshape_magnitude)
        for lane in scenario.entry_lanes
    ]
    return scenario.with_entry_lanes(lanes)
