"""Agent-centered semantic occupancy grids.

Each observer sees an 84x84 binary grid per channel covering a 50x50 m
window centered on itself and aligned to its heading. Occupancy is decided
by cell-center sampling: a cell is 1 iff its center point satisfies the
channel's geometric predicate. This makes the grids reproducible by a
per-cell brute-force check with no tolerance.

Grid conventions (fixed; tests and exports rely on them):

* cell edge = window / grid_n meters;
* row 0 is farthest ahead of the observer, the last row farthest behind;
* column 0 is leftmost (relative to heading);
* the center of cell (r, c) sits at forward = window/2 - (r + 0.5) * edge,
  left = window/2 - (c + 0.5) * edge in the observer frame.

The observer itself is never drawn into its own obstacle layer.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import PathPolyline, Point2, PolygonSet, points_in_polygon, segment_distances
from .noise import PerceivedVehicle
from .simulation import ActiveCommand, AgentState, Role


class Channel(enum.Enum):
    OBSTACLES = "obstacles"
    PATH = "path"
    NAVIGABLE = "navigable"
    STOP_LINE = "stop_line"


#: Channel layout per observer role, in frame order.
PASSIVE_CHANNELS = (Channel.OBSTACLES, Channel.PATH, Channel.NAVIGABLE)
ACTIVE_CHANNELS = (Channel.OBSTACLES, Channel.PATH, Channel.NAVIGABLE, Channel.STOP_LINE)


@dataclass(frozen=True)
class PerceptionConfig:
    grid_n: int = 84
    window: float = 50.0  # meters, square side
    n_frames: int = 4
    sample_interval: int = 1  # simulation steps between stacked frames
    speed_scale: float = 15.0  # m/s mapped to 1.0 in the non-visual channel
    stopline_halfwidth: float = 0.5  # m, stripe thickness around the stop line

    def __post_init__(self):
        if self.grid_n < 1 or self.window <= 0 or self.n_frames < 1 or self.sample_interval < 1:
            raise ValueError(f"invalid perception config: {self}")

    @property
    def cell_edge(self) -> float:
        return self.window / self.grid_n


@dataclass(frozen=True)
class SemanticLayer:
    """One binary channel of the observer's visual input."""

    grid: np.ndarray  # (n, n) uint8, 0 or 1
    channel: Channel

    def __post_init__(self):
        assert self.grid.dtype == np.uint8


@dataclass(frozen=True)
class ObserverFrame:
    """Pose of the observing agent as an origin plus unit forward vector.

    Carrying the direction as a vector (rather than an angle) lets exactly
    rotated scenes produce exactly rotated frames.
    """

    origin: np.ndarray  # (2,)
    fwd: np.ndarray  # (2,) unit

    @staticmethod
    def from_pose(position: Point2, heading: float) -> "ObserverFrame":
        return ObserverFrame(
            position.as_array(), np.array([np.cos(heading), np.sin(heading)])
        )

    @property
    def left(self) -> np.ndarray:
        return np.array([-self.fwd[1], self.fwd[0]])


@lru_cache(maxsize=8)
def _local_cells(grid_n: int, window: float) -> np.ndarray:
    """(n*n, 2) cell centers in (forward, left) observer coordinates."""
    edge = window / grid_n
    idx = np.arange(grid_n)
    forward = window / 2.0 - (idx + 0.5) * edge  # row axis
    left = window / 2.0 - (idx + 0.5) * edge  # column axis
    f, l = np.meshgrid(forward, left, indexing="ij")
    cells = np.stack([f.ravel(), l.ravel()], axis=1)
    cells.flags.writeable = False
    return cells


def cell_centers_world(frame: ObserverFrame, cfg: PerceptionConfig) -> np.ndarray:
    """World coordinates of all cell centers, row-major."""
    local = _local_cells(cfg.grid_n, cfg.window)
    return (
        frame.origin[None, :]
        + local[:, 0:1] * frame.fwd[None, :]
        + local[:, 1:2] * frame.left[None, :]
    )


def _empty_grid(cfg: PerceptionConfig) -> np.ndarray:
    return np.zeros((cfg.grid_n, cfg.grid_n), dtype=np.uint8)


def rasterize_obstacles(
    frame: ObserverFrame,
    vehicles: list[PerceivedVehicle],
    cfg: PerceptionConfig,
    cells: np.ndarray | None = None,
) -> SemanticLayer:
    """Cells whose centers fall inside some detected vehicle's footprint."""
    if cells is None:
        cells = cell_centers_world(frame, cfg)
    hit = np.zeros(len(cells), dtype=bool)
    for veh in vehicles:
        if not veh.detected:
            continue
        hl = veh.footprint.length / 2.0
        hw = veh.footprint.width / 2.0
        r = np.hypot(hl, hw)
        dx = cells[:, 0] - veh.center.x
        dy = cells[:, 1] - veh.center.y
        near = (np.abs(dx) <= r) & (np.abs(dy) <= r)
        if not near.any():
            continue
        c = np.cos(veh.heading)
        s = np.sin(veh.heading)
        u = dx[near] * c + dy[near] * s
        v = -dx[near] * s + dy[near] * c
        inside = (np.abs(u) <= hl) & (np.abs(v) <= hw)
        hit[np.nonzero(near)[0][inside]] = True
    return SemanticLayer(hit.reshape(cfg.grid_n, cfg.grid_n).astype(np.uint8), Channel.OBSTACLES)


def rasterize_path(
    frame: ObserverFrame,
    forward_vertices: np.ndarray,
    half_width: float,
    cfg: PerceptionConfig,
    cells: np.ndarray | None = None,
) -> SemanticLayer:
    """Cells within half a lane width of the observer's remaining route.

    forward_vertices is the route from the current position to the goal; a
    single vertex (observer already at the goal) marks only the cells within
    half_width of that point.
    """
    if cells is None:
        cells = cell_centers_world(frame, cfg)
    v = np.asarray(forward_vertices, dtype=float)
    if v.ndim != 2 or len(v) == 0:
        raise ValueError("forward_vertices must be a non-empty (N, 2) array")
    if len(v) == 1:
        dist = np.hypot(cells[:, 0] - v[0, 0], cells[:, 1] - v[0, 1])
        hit = dist <= half_width
    else:
        a, b = v[:-1], v[1:]
        # Drop segments that cannot reach the window.
        margin = cfg.window * np.sqrt(2.0) / 2.0 + half_width
        reach = (
            (np.minimum(a, b) <= frame.origin + margin).all(axis=1)
            & (np.maximum(a, b) >= frame.origin - margin).all(axis=1)
        )
        if reach.any():
            d = segment_distances(cells, a[reach], b[reach]).min(axis=1)
            hit = d <= half_width
        else:
            hit = np.zeros(len(cells), dtype=bool)
    return SemanticLayer(hit.reshape(cfg.grid_n, cfg.grid_n).astype(np.uint8), Channel.PATH)


def rasterize_navigable(
    frame: ObserverFrame,
    polygons: list[np.ndarray] | PolygonSet,
    cfg: PerceptionConfig,
    cells: np.ndarray | None = None,
) -> SemanticLayer:
    """Cells whose centers lie inside any navigable polygon."""
    if cells is None:
        cells = cell_centers_world(frame, cfg)
    if isinstance(polygons, PolygonSet) and len(cells) <= 4096:
        hit = polygons.contains(cells)
    else:
        polys = polygons.polygons if isinstance(polygons, PolygonSet) else polygons
        margin = cfg.window * np.sqrt(2.0) / 2.0
        hit = np.zeros(len(cells), dtype=bool)
        for poly in polys:
            if (poly.min(axis=0) > frame.origin + margin).any():
                continue
            if (poly.max(axis=0) < frame.origin - margin).any():
                continue
            hit |= points_in_polygon(cells, poly)
    return SemanticLayer(hit.reshape(cfg.grid_n, cfg.grid_n).astype(np.uint8), Channel.NAVIGABLE)


def rasterize_stopline(
    frame: ObserverFrame,
    segment: np.ndarray,
    cfg: PerceptionConfig,
    cells: np.ndarray | None = None,
) -> SemanticLayer:
    """Thin transverse stripe around the observer's entry stop line."""
    if cells is None:
        cells = cell_centers_world(frame, cfg)
    seg = np.asarray(segment, dtype=float)
    d = segment_distances(cells, seg[0:1], seg[1:2])[:, 0]
    hit = d <= cfg.stopline_halfwidth
    return SemanticLayer(hit.reshape(cfg.grid_n, cfg.grid_n).astype(np.uint8), Channel.STOP_LINE)


# ---------------------------------------------------------------------------
# Frame stacking and non-visual features
# ---------------------------------------------------------------------------

Frame = tuple[SemanticLayer, ...]


@dataclass(frozen=True)
class FrameStack:
    """The network's visual input: n_frames time samples, newest last."""

    frames: tuple[Frame, ...]
    sample_interval: int

    def __post_init__(self):
        counts = {len(f) for f in self.frames}
        if len(counts) != 1:
            raise ValueError("all frames must have the same channel count")
        n = counts.pop()
        if n == len(PASSIVE_CHANNELS):
            expected = PASSIVE_CHANNELS
        elif n == len(ACTIVE_CHANNELS):
            expected = ACTIVE_CHANNELS
        else:
            raise ValueError(f"frames must have 3 (passive) or 4 (active) channels, got {n}")
        for f in self.frames:
            if tuple(layer.channel for layer in f) != expected:
                raise ValueError(f"channel order must be {expected}")

    @property
    def n_channels(self) -> int:
        return len(self.frames[0])

    def to_array(self) -> np.ndarray:
        """(n_frames * channels, n, n) uint8, frames stacked oldest first."""
        return np.stack(
            [layer.grid for frame in self.frames for layer in frame], axis=0
        )


def build_frame_stack(history: list[Frame], cfg: PerceptionConfig) -> FrameStack:
    """Stack the most recent frames at the configured spacing.

    history holds one frame per simulation step, oldest first. Missing
    history at episode start is padded by repeating the oldest frame.
    """
    if not history:
        raise ValueError("history must contain at least one frame")
    last = len(history) - 1
    picks = [max(0, last - k * cfg.sample_interval) for k in range(cfg.n_frames)]
    return FrameStack(tuple(history[i] for i in reversed(picks)), cfg.sample_interval)


@dataclass(frozen=True)
class NonVisualInput:
    """Scalar features, scaled to [0, 1] before entering the network.

    Passive observers get (speed, target speed, aggressiveness, distance to
    goal); active observers get (speed, target speed, aggressiveness)
    followed by a one-hot of the last command.
    """

    values: np.ndarray

    def to_array(self) -> np.ndarray:
        return self.values


def encode_nonvisual(
    observer: AgentState,
    cfg: PerceptionConfig,
    distance_to_goal: float | None = None,
    goal_length: float | None = None,
) -> NonVisualInput:
    v = min(observer.v / cfg.speed_scale, 1.0)
    target = min(observer.target_speed / cfg.speed_scale, 1.0)
    if observer.role is Role.PASSIVE:
        if goal_length is None or goal_length <= 0 or distance_to_goal is None:
            raise ValueError("passive observers need distance_to_goal and goal_length")
        dist = min(max(distance_to_goal, 0.0) / goal_length, 1.0)
        vals = np.array([v, target, observer.aggressiveness, dist])
    else:
        one_hot = np.zeros(len(ActiveCommand))
        one_hot[int(observer.last_command)] = 1.0
        vals = np.concatenate([[v, target, observer.aggressiveness], one_hot])
    return NonVisualInput(vals)


def save_layer_png(layer: SemanticLayer, path: str | Path) -> None:
    """Write a layer as a grayscale PNG, 0 -> black, 1 -> white."""
    Image.fromarray(layer.grid * np.uint8(255), mode="L").save(path)


def layer_filename(episode: int, step: int, channel: Channel) -> str:
    return f"{episode}_{step}_{channel.value}.png"
