"""Scenario maps: roundabouts and a highway junction.

Maps are stored as UTF-8 JSON documents (schema below) and validated on
load. The bundled scenarios live in the package's ``maps/`` directory and
are regenerated by ``scripts/make_maps.py``.

JSON schema (all lengths in meters):

* ``kind``: ``"roundabout"`` or ``"junction"``
* ``name``: scenario identifier
* ``ring_paths`` / ``highway_paths``: arrays of ``[x, y]`` vertex arrays
* ``entry_lanes`` / ``merge_lane`` / ``exit_lanes``: lane objects with
  ``width`` and a ``centerline`` that is either ``{"bezier": [[x,y] x4]}``
  (flattened on load, reshapable) or ``{"vertices": [[x,y], ...]}``
* ``navigable_polygon``: array of simple polygons (vertex arrays); lane
  bands are derived from the lanes at query time and are not stored
* ``stop_lines``: array of 2-point segments, one per entry lane
* ``spawn_points``: array of ``[path_index, arclength]`` pairs
* ``junction_angle`` (junction only): merge angle in radians
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import (
    FLATTEN_TOL,
    CubicBezier,
    GeometryError,
    LaneShape,
    PathPolyline,
    Point2,
    flatten_bezier,
    point_near_polygon,
    polyline_band,
)

#: Slack for "path vertex lies inside the navigable area" checks.
CONTAINMENT_TOL = 0.1
#: Slack for "lane terminates on a path" connectivity checks.
CONNECT_TOL = 0.5
#: Minimum along-ring spacing between passive spawn slots.
SPAWN_SPACING = 8.0

DEFAULT_LANE_WIDTH = 3.5


class MapValidationError(ValueError):
    """A map file violates the schema or a geometric invariant."""


@dataclass(frozen=True)
class RoundaboutMap:
    """Ring roads for circulating traffic plus entry/exit lanes."""

    name: str
    ring_paths: list[PathPolyline]
    entry_lanes: list[LaneShape]
    exit_lanes: list[LaneShape]
    navigable_polygon: list[np.ndarray]
    stop_lines: list[np.ndarray]  # (2, 2) segments, one per entry
    passive_spawn_points: list[tuple[int, float]]

    @property
    def kind(self) -> str:
        return "roundabout"

    @property
    def n_entries(self) -> int:
        return len(self.entry_lanes)

    def traffic_paths(self) -> list[PathPolyline]:
        return self.ring_paths

    def effective_navigable(self) -> list[np.ndarray]:
        """Static polygons plus the current entry/exit lane bands."""
        bands = [lane.band_polygon() for lane in self.entry_lanes + self.exit_lanes]
        return list(self.navigable_polygon) + bands

    def with_entry_lanes(self, lanes: list[LaneShape]) -> "RoundaboutMap":
        return replace(self, entry_lanes=lanes)


@dataclass(frozen=True)
class JunctionMap:
    """Straight highway with a single angled merge lane."""

    name: str
    highway_paths: list[PathPolyline]
    merge_lane: LaneShape
    junction_angle: float
    navigable_polygon: list[np.ndarray]
    stop_lines: list[np.ndarray]
    passive_spawn_points: list[tuple[int, float]]
    exit_lanes: list[LaneShape] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return "junction"

    @property
    def n_entries(self) -> int:
        return 1

    @property
    def entry_lanes(self) -> list[LaneShape]:
        return [self.merge_lane]

    def traffic_paths(self) -> list[PathPolyline]:
        return self.highway_paths

    def effective_navigable(self) -> list[np.ndarray]:
        bands = [lane.band_polygon() for lane in [self.merge_lane] + self.exit_lanes]
        return list(self.navigable_polygon) + bands

    def with_entry_lanes(self, lanes: list[LaneShape]) -> "JunctionMap":
        assert len(lanes) == 1
        return replace(self, merge_lane=lanes[0])


ScenarioMap = RoundaboutMap | JunctionMap


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_map(m: ScenarioMap) -> None:
    """Check all geometric invariants, raising MapValidationError on failure."""
    paths = m.traffic_paths()
    if not paths:
        raise MapValidationError(f"{m.name}: map has no traffic paths")
    entries = m.entry_lanes
    if len(m.stop_lines) != len(entries):
        raise MapValidationError(
            f"{m.name}: {len(m.stop_lines)} stop lines for {len(entries)} entry lanes"
        )
    for i, (lane, stop) in enumerate(zip(entries, m.stop_lines)):
        end = lane.centerline.vertices[-1]
        mid = 0.5 * (stop[0] + stop[1])
        if np.linalg.norm(mid - end) > lane.width:
            raise MapValidationError(
                f"{m.name}: stop line {i} is {np.linalg.norm(mid - end):.2f} m from "
                f"its lane end (limit {lane.width} m)"
            )
    nav = m.effective_navigable()
    for kind_name, path_list in (("path", paths), ("lane", [e.centerline for e in entries])):
        for pi, path in enumerate(path_list):
            for v in path.vertices:
                if not any(point_near_polygon(v, poly, CONTAINMENT_TOL) for poly in nav):
                    raise MapValidationError(
                        f"{m.name}: {kind_name} {pi} vertex ({v[0]:.2f}, {v[1]:.2f}) "
                        f"outside navigable area"
                    )
    for pi, s in m.passive_spawn_points:
        if not 0 <= pi < len(paths):
            raise MapValidationError(f"{m.name}: spawn point references path {pi}")
        if not 0.0 <= s <= paths[pi].length:
            raise MapValidationError(f"{m.name}: spawn arclength {s} out of range")
    if isinstance(m, JunctionMap):
        if not 0.0 < m.junction_angle <= math.pi / 2:
            raise MapValidationError(
                f"{m.name}: junction angle {m.junction_angle} outside (0, pi/2]"
            )
        from .geometry import distance_to_polyline

        end = m.merge_lane.centerline.vertices[-1]
        d = min(
            float(distance_to_polyline(end[None, :], p.vertices)[0])
            for p in m.highway_paths
        )
        if d > CONNECT_TOL:
            raise MapValidationError(
                f"{m.name}: merge lane ends {d:.2f} m from the highway (limit {CONNECT_TOL} m)"
            )


def merge_arclength(m: ScenarioMap, entry_index: int) -> tuple[int, float]:
    """(traffic path index, arclength) where an entry lane joins the traffic.

    The lane end is projected onto the traffic polylines; bundled maps author
    entry lanes to terminate exactly on a path vertex, so the projection is
    exact there.
    """
    from .geometry import segment_distances

    end = m.entry_lanes[entry_index].centerline.vertices[-1]
    best = (0, 0.0, float("inf"))
    for pi, path in enumerate(m.traffic_paths()):
        a = path.vertices[:-1]
        b = path.vertices[1:]
        d = segment_distances(end[None, :], a, b)[0]
        k = int(np.argmin(d))
        if d[k] < best[2]:
            seg = b[k] - a[k]
            t = float(np.dot(end - a[k], seg) / np.dot(seg, seg))
            t = min(max(t, 0.0), 1.0)
            s = float(
                path.cumulative_arclength[k]
                + t * (path.cumulative_arclength[k + 1] - path.cumulative_arclength[k])
            )
            best = (pi, s, float(d[k]))
    return best[0], best[1]


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def _lane_to_json(lane: LaneShape) -> dict:
    if lane.source_bezier is not None:
        center = {"bezier": lane.source_bezier.control_array().tolist()}
    else:
        center = {"vertices": lane.centerline.vertices.tolist()}
    return {"centerline": center, "width": lane.width}


def _lane_from_json(obj: dict, where: str) -> LaneShape:
    try:
        center = obj["centerline"]
        width = float(obj["width"])
        if "bezier" in center:
            ctrl = [Point2(float(x), float(y)) for x, y in center["bezier"]]
            if len(ctrl) != 4:
                raise MapValidationError(f"{where}: bezier centerline needs 4 control points")
            bez = CubicBezier(*ctrl)
            return LaneShape(flatten_bezier(bez, FLATTEN_TOL), width, source_bezier=bez)
        return LaneShape(PathPolyline(np.array(center["vertices"], dtype=float)), width)
    except (KeyError, TypeError, GeometryError) as exc:
        raise MapValidationError(f"{where}: {exc}") from exc


def map_to_json(m: ScenarioMap) -> dict:
    doc: dict = {
        "kind": m.kind,
        "name": m.name,
        "navigable_polygon": [p.tolist() for p in m.navigable_polygon],
        "stop_lines": [s.tolist() for s in m.stop_lines],
        "spawn_points": [[pi, s] for pi, s in m.passive_spawn_points],
        "exit_lanes": [_lane_to_json(l) for l in m.exit_lanes],
    }
    if isinstance(m, RoundaboutMap):
        doc["ring_paths"] = [p.vertices.tolist() for p in m.ring_paths]
        doc["entry_lanes"] = [_lane_to_json(l) for l in m.entry_lanes]
    else:
        doc["highway_paths"] = [p.vertices.tolist() for p in m.highway_paths]
        doc["merge_lane"] = _lane_to_json(m.merge_lane)
        doc["junction_angle"] = m.junction_angle
    return doc


def map_from_json(doc: dict) -> ScenarioMap:
    try:
        kind = doc["kind"]
        name = doc["name"]
    except KeyError as exc:
        raise MapValidationError(f"missing top-level field {exc}") from exc
    nav = [np.array(p, dtype=float) for p in doc.get("navigable_polygon", [])]
    stops = [np.array(s, dtype=float) for s in doc.get("stop_lines", [])]
    for i, s in enumerate(stops):
        if s.shape != (2, 2):
            raise MapValidationError(f"{name}: stop line {i} is not a 2-point segment")
    spawns = [(int(pi), float(s)) for pi, s in doc.get("spawn_points", [])]
    exits = [_lane_from_json(l, f"{name} exit lane {i}") for i, l in enumerate(doc.get("exit_lanes", []))]
    if kind == "roundabout":
        rings = [PathPolyline(np.array(v, dtype=float)) for v in doc["ring_paths"]]
        entries = [
            _lane_from_json(l, f"{name} entry lane {i}")
            for i, l in enumerate(doc["entry_lanes"])
        ]
        m: ScenarioMap = RoundaboutMap(name, rings, entries, exits, nav, stops, spawns)
    elif kind == "junction":
        highways = [PathPolyline(np.array(v, dtype=float)) for v in doc["highway_paths"]]
        merge = _lane_from_json(doc["merge_lane"], f"{name} merge lane")
        m = JunctionMap(
            name, highways, merge, float(doc["junction_angle"]), nav, stops, spawns,
            exit_lanes=exits,
        )
    else:
        raise MapValidationError(f"unknown map kind {kind!r}")
    validate_map(m)
    return m


def load_map(path: str | Path) -> ScenarioMap:
    """Load and fully validate a map file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapValidationError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise MapValidationError(f"{path}: top level must be a JSON object")
    return map_from_json(doc)


def save_map(m: ScenarioMap, path: str | Path) -> None:
    Path(path).write_text(json.dumps(map_to_json(m), indent=1), encoding="utf-8")


BUNDLED_MAPS = (
    "training_1",
    "training_2",
    "training_3",
    "training_4",
    "validation",
    "test_roundabout",
    "junction",
)


def bundled_map_path(name: str) -> Path:
    p = resources.files("roundabout_rl").joinpath("maps", f"{name}.json")
    return Path(str(p))


def load_bundled_map(name: str) -> ScenarioMap:
    if name not in BUNDLED_MAPS:
        raise MapValidationError(f"unknown bundled map {name!r}; known: {BUNDLED_MAPS}")
    return load_map(bundled_map_path(name))


def resolve_map(name_or_path: str) -> ScenarioMap:
    """Accept either a bundled map name or a path to a map file."""
    if name_or_path in BUNDLED_MAPS:
        return load_bundled_map(name_or_path)
    return load_map(name_or_path)


# ---------------------------------------------------------------------------
# Procedural builders (used by scripts/make_maps.py and junction evaluation)
# ---------------------------------------------------------------------------


def _circle_polyline(radius: float, tol: float = FLATTEN_TOL) -> PathPolyline:
    """Closed regular polygon approximating a circle to the chord tolerance."""
    step = 2.0 * math.acos(max(-1.0, 1.0 - tol / radius))
    n = max(16, int(math.ceil(2.0 * math.pi / step)))
    theta = np.linspace(0.0, 2.0 * math.pi, n + 1)
    return PathPolyline(np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1))


def _annulus_halves(r_in: float, r_out: float, boundary_tol: float = 0.05) -> list[np.ndarray]:
    """Annulus as two overlapping C-shaped simple polygons.

    The halves overlap by a small wedge so no interior point of the union
    falls exactly on a shared edge of both polygons.
    """
    step = 2.0 * math.acos(max(-1.0, 1.0 - boundary_tol / r_out))
    polys = []
    overlap = 0.15
    for lo, hi in ((-overlap, math.pi + overlap), (math.pi - overlap, 2 * math.pi + overlap)):
        n = max(8, int(math.ceil((hi - lo) / step)))
        th = np.linspace(lo, hi, n + 1)
        outer = np.stack([r_out * np.cos(th), r_out * np.sin(th)], axis=1)
        inner = np.stack([r_in * np.cos(th[::-1]), r_in * np.sin(th[::-1])], axis=1)
        polys.append(np.vstack([outer, inner]))
    return polys


def _spawn_slots(path_index: int, length: float) -> list[tuple[int, float]]:
    n = int(length // SPAWN_SPACING)
    return [(path_index, i * length / n) for i in range(n)]


def make_roundabout_map(
    name: str,
    ring_radius: float,
    entry_angles: list[float],
    exit_angles: list[float] | None = None,
    lane_width: float = DEFAULT_LANE_WIDTH,
    approach_length: float = 28.0,
) -> RoundaboutMap:
    """Build a single-ring roundabout with tangent entry and exit lanes.

    Entry lanes terminate exactly on a ring vertex (requested angles snap to
    the ring's vertex grid), so the composed insertion route concatenates
    without a seam.
    """
    ring = _circle_polyline(ring_radius)
    r = ring_radius
    n_ring = len(ring.vertices) - 1
    thetas = np.linspace(0.0, 2.0 * math.pi, n_ring + 1)

    def snap(phi: float) -> tuple[np.ndarray, float]:
        k = int(np.argmin(np.abs(thetas[:-1] - (phi % (2.0 * math.pi)))))
        return ring.vertices[k].copy(), float(thetas[k])

    entries = []
    stops = []
    for phi in entry_angles:
        merge, phi = snap(phi)
        u = np.array([math.cos(phi), math.sin(phi)])  # radial outward
        t = np.array([-math.sin(phi), math.cos(phi)])  # ring tangent (CCW)
        start = merge + 0.85 * approach_length * u - 0.5 * approach_length * t
        p1 = start + (merge - start) * 0.3 - 6.0 * t
        p2 = merge - 9.0 * t
        bez = CubicBezier(
            Point2(*start), Point2(*p1), Point2(*p2), Point2(*merge)
        )
        entries.append(LaneShape(flatten_bezier(bez), lane_width, source_bezier=bez))
        # Stop line sits 2.5 m short of the merge point, across the lane.
        lane_path = entries[-1].centerline
        p, heading = lane_path.pose_at(lane_path.length - 2.5)
        n = np.array([-math.sin(heading), math.cos(heading)])
        c = p.as_array()
        stops.append(np.stack([c - (lane_width / 2) * n, c + (lane_width / 2) * n]))
    exits = []
    for phi in exit_angles or []:
        depart, phi = snap(phi)
        u = np.array([math.cos(phi), math.sin(phi)])
        t = np.array([-math.sin(phi), math.cos(phi)])
        end = depart + 0.85 * approach_length * u + 0.5 * approach_length * t
        p1 = depart + 9.0 * t
        p2 = end - (end - depart) * 0.3 + 6.0 * t
        bez = CubicBezier(Point2(*depart), Point2(*p1), Point2(*p2), Point2(*end))
        exits.append(LaneShape(flatten_bezier(bez), lane_width, source_bezier=bez))
    nav = _annulus_halves(r - lane_width / 2 - 0.3, r + lane_width / 2 + 0.3)
    m = RoundaboutMap(
        name=name,
        ring_paths=[ring],
        entry_lanes=entries,
        exit_lanes=exits,
        navigable_polygon=nav,
        stop_lines=stops,
        passive_spawn_points=_spawn_slots(0, ring.length),
    )
    validate_map(m)
    return m


def make_junction_map(
    name: str = "junction",
    junction_angle: float = math.pi / 4,
    highway_length: float = 300.0,
    merge_station: float = 180.0,
    merge_length: float = 45.0,
    lane_width: float = DEFAULT_LANE_WIDTH,
) -> JunctionMap:
    """Build a straight highway joined by one merge lane at the given angle."""
    if not 0.0 < junction_angle <= math.pi / 2:
        raise MapValidationError(f"junction angle {junction_angle} outside (0, pi/2]")
    highway = PathPolyline(np.array([[0.0, 0.0], [highway_length, 0.0]]))
    merge = np.array([merge_station, 0.0])
    d = np.array([-math.cos(junction_angle), math.sin(junction_angle)])
    start = merge + merge_length * d
    p1 = start - 0.4 * merge_length * d
    p2 = merge - np.array([0.35 * merge_length, 0.0])
    bez = CubicBezier(Point2(*start), Point2(*p1), Point2(*p2), Point2(*merge))
    lane = LaneShape(flatten_bezier(bez), lane_width, source_bezier=bez)
    lane_path = lane.centerline
    p, heading = lane_path.pose_at(lane_path.length - 2.5)
    n = np.array([-math.sin(heading), math.cos(heading)])
    c = p.as_array()
    stop = np.stack([c - (lane_width / 2) * n, c + (lane_width / 2) * n])
    hw = lane_width / 2 + 0.3
    nav = [
        np.array(
            [
                [-5.0, -hw],
                [highway_length + 5.0, -hw],
                [highway_length + 5.0, hw],
                [-5.0, hw],
            ]
        )
    ]
    m = JunctionMap(
        name=name,
        highway_paths=[highway],
        merge_lane=lane,
        junction_angle=junction_angle,
        navigable_polygon=nav,
        stop_lines=[stop],
        passive_spawn_points=_spawn_slots(0, highway.length),
    )
    validate_map(m)
    return m
