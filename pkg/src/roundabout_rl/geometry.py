"""Parametric curves and arc-length paths.

Everything downstream (simulation, perception, noise) works on flattened
polylines with precomputed cumulative arc-length, so curve sources (cubic
Beziers, circular arcs) are flattened once at construction time and position
queries become binary searches over the arc-length table.

Conventions: world coordinates in meters, headings in radians measured
counter-clockwise from +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Chord tolerance used when flattening curve sources into polylines.
FLATTEN_TOL = 0.01


class GeometryError(ValueError):
    """Invalid geometric input (domain violations, degenerate shapes)."""


@dataclass(frozen=True)
class Point2:
    """A point in the world frame."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite coordinates ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class CubicBezier:
    """Cubic Bezier curve given by four control points."""

    p0: Point2
    p1: Point2
    p2: Point2
    p3: Point2

    def control_array(self) -> np.ndarray:
        return np.array(
            [[p.x, p.y] for p in (self.p0, self.p1, self.p2, self.p3)], dtype=float
        )


def bezier_point(b: CubicBezier, t: float) -> Point2:
    """Evaluate a cubic Bezier at parameter t via de Casteljau's algorithm."""
    if not 0.0 <= t <= 1.0:
        raise GeometryError(f"bezier parameter t={t} outside [0, 1]")
    pts = b.control_array()
    for _ in range(3):
        pts = (1.0 - t) * pts[:-1] + t * pts[1:]
    return Point2(float(pts[0, 0]), float(pts[0, 1]))


def _split_bezier(ctrl: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """de Casteljau midpoint subdivision of a control polygon (4, 2)."""
    p01 = 0.5 * (ctrl[0] + ctrl[1])
    p12 = 0.5 * (ctrl[1] + ctrl[2])
    p23 = 0.5 * (ctrl[2] + ctrl[3])
    p012 = 0.5 * (p01 + p12)
    p123 = 0.5 * (p12 + p23)
    mid = 0.5 * (p012 + p123)
    left = np.array([ctrl[0], p01, p012, mid])
    right = np.array([mid, p123, p23, ctrl[3]])
    return left, right


def _flat_enough(ctrl: np.ndarray, tol: float) -> bool:
    """True when every control point is within tol of the chord p0-p3.

    The curve lies in the convex hull of its control points, so this bounds
    the deviation of the true curve from the chord.
    """
    chord = ctrl[3] - ctrl[0]
    clen = math.hypot(chord[0], chord[1])
    if clen < 1e-12:
        # Degenerate chord: fall back to distance from p0.
        d1 = np.linalg.norm(ctrl[1] - ctrl[0])
        d2 = np.linalg.norm(ctrl[2] - ctrl[0])
        return max(d1, d2) <= tol
    for i in (1, 2):
        cross = abs(
            chord[0] * (ctrl[i][1] - ctrl[0][1]) - chord[1] * (ctrl[i][0] - ctrl[0][0])
        )
        if cross / clen > tol:
            return False
        # Also reject control points far outside the chord span so hairpin
        # curves with collinear controls are still subdivided.
        proj = (chord[0] * (ctrl[i][0] - ctrl[0][0]) + chord[1] * (ctrl[i][1] - ctrl[0][1])) / clen
        if proj < -tol or proj > clen + tol:
            return False
    return True


def flatten_bezier(b: CubicBezier, max_chord_error: float = FLATTEN_TOL) -> "PathPolyline":
    """Adaptively subdivide a cubic Bezier into a polyline.

    Subdivision halves the parameter interval until every emitted chord is
    within max_chord_error of the true curve; the result starts at p0 and
    ends at p3 exactly.
    """
    if max_chord_error <= 0:
        raise GeometryError("max_chord_error must be positive")
    verts: list[np.ndarray] = []

    def recurse(ctrl: np.ndarray, depth: int) -> None:
        if depth >= 24 or _flat_enough(ctrl, max_chord_error):
            verts.append(ctrl[3])
            return
        left, right = _split_bezier(ctrl)
        recurse(left, depth + 1)
        recurse(right, depth + 1)

    ctrl = b.control_array()
    verts.append(ctrl[0])
    recurse(ctrl, 0)
    return PathPolyline(np.array(verts))


class PathPolyline:
    """Polyline with a cumulative arc-length table.

    Consecutive duplicate vertices are dropped at construction; the polyline
    must retain at least two vertices and positive total length.
    """

    __slots__ = ("vertices", "cumulative_arclength")

    def __init__(self, vertices: np.ndarray):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise GeometryError("polyline needs an (N, 2) array with N >= 2")
        if not np.all(np.isfinite(v)):
            raise GeometryError("polyline vertices must be finite")
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 0.0])
        v = v[keep]
        if v.shape[0] < 2:
            raise GeometryError("polyline has zero total length")
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        self.vertices = v
        self.vertices.flags.writeable = False
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        cum.flags.writeable = False
        self.cumulative_arclength = cum

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    @property
    def closed(self) -> bool:
        """True when first and last vertex coincide (ring loop)."""
        return bool(np.all(np.abs(self.vertices[0] - self.vertices[-1]) < 1e-9))

    def _segment_index(self, s: float) -> int:
        idx = int(np.searchsorted(self.cumulative_arclength, s, side="right") - 1)
        return min(max(idx, 0), len(self.vertices) - 2)

    def point_at(self, s: float) -> Point2:
        p, _ = self.pose_at(s)
        return p

    def pose_at(self, s: float) -> tuple[Point2, float]:
        """Position and heading at arc-length s (linear interpolation)."""
        if not 0.0 <= s <= self.length:
            raise GeometryError(f"arclength s={s} outside [0, {self.length}]")
        i = self._segment_index(s)
        a = self.vertices[i]
        b = self.vertices[i + 1]
        seg_len = self.cumulative_arclength[i + 1] - self.cumulative_arclength[i]
        t = (s - self.cumulative_arclength[i]) / seg_len
        p = a + t * (b - a)
        heading = math.atan2(b[1] - a[1], b[0] - a[0])
        return Point2(float(p[0]), float(p[1])), heading

    def wrap(self, s: float) -> float:
        """Arc-length modulo total length (used by traffic on ring loops)."""
        return float(s % self.length)

    def sub_path(self, s0: float, s1: float) -> "PathPolyline":
        """Extract the sub-polyline between arc-lengths s0 < s1."""
        if not (0.0 <= s0 < s1 <= self.length):
            raise GeometryError(f"invalid sub-path range [{s0}, {s1}]")
        i0 = self._segment_index(s0)
        i1 = self._segment_index(s1)
        start = self.point_at(s0).as_array()
        end = self.point_at(s1).as_array()
        mids = self.vertices[i0 + 1 : i1 + 1]
        return PathPolyline(np.vstack([start[None, :], mids, end[None, :]]))

    def sub_vertices(self, s0: float, s1: float) -> np.ndarray:
        """Vertex array of the sub-polyline between arc-lengths s0 <= s1.

        Degenerates to a single interpolated point when s0 == s1. Same
        geometry as sub_path without constructing a new polyline.
        """
        if not (0.0 <= s0 <= s1 <= self.length):
            raise GeometryError(f"invalid sub-path range [{s0}, {s1}]")
        start = self.point_at(s0).as_array()
        if s0 == s1:
            return start[None, :]
        i0 = self._segment_index(s0)
        i1 = self._segment_index(s1)
        end = self.point_at(s1).as_array()
        mids = self.vertices[i0 + 1 : i1 + 1]
        return np.vstack([start[None, :], mids, end[None, :]])

    def sub_path_wrapped(self, s0: float, length: float) -> "PathPolyline":
        """Sub-path of given length starting at s0, wrapping on closed loops."""
        s0 = self.wrap(s0)
        if s0 + length <= self.length:
            return self.sub_path(s0, s0 + length)
        if not self.closed:
            raise GeometryError("sub-path runs past the end of an open path")
        first = self.sub_path(s0, self.length)
        second = self.sub_path(0.0, length - (self.length - s0))
        return concat_paths(first, second)

    def refined(self, max_segment: float) -> "PathPolyline":
        """Insert interpolated vertices so no segment exceeds max_segment.

        Inserted vertices lie exactly on the original segments, so the
        geometry is unchanged.
        """
        out = [self.vertices[0]]
        for a, b in zip(self.vertices[:-1], self.vertices[1:]):
            seg = np.linalg.norm(b - a)
            n = max(1, int(math.ceil(seg / max_segment)))
            for k in range(1, n):
                out.append(a + (k / n) * (b - a))
            out.append(b)
        return PathPolyline(np.array(out))

    def __repr__(self) -> str:
        return f"PathPolyline({len(self.vertices)} vertices, length={self.length:.3f} m)"


def path_length(p: PathPolyline) -> float:
    """Total arc-length of a path."""
    return p.length


def pose_at_arclength(p: PathPolyline, s: float) -> tuple[Point2, float]:
    """Position and heading at arc-length s along p."""
    return p.pose_at(s)


def concat_paths(a: PathPolyline, b: PathPolyline) -> PathPolyline:
    """Join two polylines where a ends (within 1e-9 m) at b's start."""
    if np.any(np.abs(a.vertices[-1] - b.vertices[0]) > 1e-9):
        raise GeometryError("paths are not contiguous")
    return PathPolyline(np.vstack([a.vertices, b.vertices[1:]]))


def normalization_factor(l: float, l_max: float) -> float:
    """Relative path-length factor l / l_max used to scale returns.

    Episodes on short loops collect rewards over less road than episodes on
    long ones; scaling by the length ratio keeps their returns comparable.
    """
    if l <= 0 or l_max <= 0:
        raise GeometryError(f"path lengths must be positive (l={l}, l_max={l_max})")
    if l > l_max:
        raise GeometryError(f"l={l} exceeds l_max={l_max}")
    return l / l_max


@dataclass(frozen=True)
class LaneShape:
    """A lane: centerline polyline plus constant width.

    Lanes authored from a cubic Bezier keep their control points in
    ``source_bezier`` so reshaping can displace the interior controls without
    first re-fitting a curve to the flattened centerline.
    """

    centerline: PathPolyline
    width: float
    source_bezier: CubicBezier | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.width <= 0:
            raise GeometryError(f"lane width must be positive, got {self.width}")

    def band_polygon(self, margin: float = 0.0, boundary_tol: float = 0.05) -> np.ndarray:
        """Closed polygon covering the lane (centerline offset by width/2).

        The outline is built from a coarser flattening of the source curve
        (boundary_tol chord error) to keep polygon edge counts low; lane
        following still uses the finely flattened centerline.
        """
        center = self.centerline
        if self.source_bezier is not None and boundary_tol > FLATTEN_TOL:
            center = flatten_bezier(self.source_bezier, boundary_tol)
        return polyline_band(center, self.width / 2.0 + margin)


def _vertex_normals(vertices: np.ndarray) -> np.ndarray:
    """Unit left normals per vertex (bisector of adjacent segment normals)."""
    d = np.diff(vertices, axis=0)
    seg_n = np.stack([-d[:, 1], d[:, 0]], axis=1)
    seg_n /= np.linalg.norm(seg_n, axis=1, keepdims=True)
    vn = np.empty_like(vertices)
    vn[0] = seg_n[0]
    vn[-1] = seg_n[-1]
    if len(vertices) > 2:
        avg = seg_n[:-1] + seg_n[1:]
        norms = np.linalg.norm(avg, axis=1, keepdims=True)
        norms[norms < 1e-12] = 1.0
        vn[1:-1] = avg / norms
    return vn


def polyline_band(path: PathPolyline, half_width: float) -> np.ndarray:
    """Simple polygon covering all points within half_width of the polyline.

    Built by offsetting each vertex along its bisector normal (miter join,
    clamped); adequate for the gently-curved lanes used here.
    """
    v = path.vertices
    n = _vertex_normals(v)
    left = v + half_width * n
    right = v - half_width * n
    return np.vstack([left, right[::-1]])


def _end_tangents(path: PathPolyline) -> tuple[np.ndarray, np.ndarray]:
    v = path.vertices
    t0 = v[1] - v[0]
    t1 = v[-1] - v[-2]
    return t0 / np.linalg.norm(t0), t1 / np.linalg.norm(t1)


def straightened_bezier(path: PathPolyline) -> CubicBezier:
    """Cubic whose endpoints and end directions match the polyline.

    Interior controls sit on the end-tangent rays at one third of the total
    arc-length, which reproduces a straight polyline exactly.
    """
    t0, t1 = _end_tangents(path)
    h = path.length / 3.0
    a = path.vertices[0]
    b = path.vertices[-1]
    return CubicBezier(
        Point2(float(a[0]), float(a[1])),
        Point2(float(a[0] + h * t0[0]), float(a[1] + h * t0[1])),
        Point2(float(b[0] - h * t1[0]), float(b[1] - h * t1[1])),
        Point2(float(b[0]), float(b[1])),
    )


def reshape_entry_lane(
    lane: LaneShape, rng: np.random.Generator | int, magnitude: float
) -> LaneShape:
    """Bend a lane by displacing its interior Bezier controls sideways.

    The endpoints stay fixed; the two interior control points move
    perpendicular to the lane's overall direction by independent uniform
    draws in [-magnitude, +magnitude]. Width is unchanged. With a zero
    magnitude the result flattens the base curve unchanged.
    """
    if magnitude < 0:
        raise GeometryError("magnitude must be >= 0")
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    base = lane.source_bezier or straightened_bezier(lane.centerline)
    ctrl = base.control_array()
    chord = ctrl[3] - ctrl[0]
    clen = np.linalg.norm(chord)
    if clen < 1e-9:
        raise GeometryError("degenerate lane: endpoints coincide")
    normal = np.array([-chord[1], chord[0]]) / clen
    e1, e2 = gen.uniform(-magnitude, magnitude, size=2)
    new = CubicBezier(
        base.p0,
        Point2(float(ctrl[1][0] + e1 * normal[0]), float(ctrl[1][1] + e1 * normal[1])),
        Point2(float(ctrl[2][0] + e2 * normal[0]), float(ctrl[2][1] + e2 * normal[1])),
        base.p3,
    )
    return LaneShape(flatten_bezier(new, FLATTEN_TOL), lane.width, source_bezier=new)


# ---------------------------------------------------------------------------
# Point-in-polygon (crossing number, precomputed edge coefficients)
# ---------------------------------------------------------------------------


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd inclusion test for an (N, 2) batch against a simple polygon."""
    px = points[:, 0]
    py = points[:, 1]
    xi = polygon[:, 0]
    yi = polygon[:, 1]
    xj = np.roll(xi, -1)
    yj = np.roll(yi, -1)
    inside = np.zeros(len(points), dtype=bool)
    # Pre-filter by bounding box; everything outside it is trivially out.
    box = (
        (px >= xi.min())
        & (px <= xi.max())
        & (py >= yi.min())
        & (py <= yi.max())
    )
    if not box.any():
        return inside
    idx = np.nonzero(box)[0]
    bx = px[idx][:, None]
    by = py[idx][:, None]
    crosses = (yi[None, :] > by) != (yj[None, :] > by)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = (xj - xi)[None, :] * (by - yi[None, :]) / (yj - yi)[None, :] + xi[None, :]
    hits = crosses & (bx < x_at)
    inside[idx] = (hits.sum(axis=1) % 2).astype(bool)
    return inside


class PolygonSet:
    """Precompiled union of simple polygons for repeated inclusion queries.

    Stores every edge of every polygon in flat arrays with the classic
    precomputed slope/intercept form of the horizontal-ray crossing test, so
    one vectorized pass over (points x edges) yields per-polygon crossing
    parities.
    """

    def __init__(self, polygons: list[np.ndarray]):
        self.polygons = [np.asarray(p, dtype=float) for p in polygons]
        xi, yi, xj, yj, offsets = [], [], [], [], [0]
        for p in self.polygons:
            xi.append(p[:, 0])
            yi.append(p[:, 1])
            xj.append(np.concatenate([p[1:, 0], p[:1, 0]]))
            yj.append(np.concatenate([p[1:, 1], p[:1, 1]]))
            offsets.append(offsets[-1] + len(p))
        self.yi = np.concatenate(yi) if yi else np.empty(0)
        self.yj = np.concatenate(yj) if yj else np.empty(0)
        xi_a = np.concatenate(xi) if xi else np.empty(0)
        xj_a = np.concatenate(xj) if xj else np.empty(0)
        dy = self.yj - self.yi
        flat = dy == 0.0
        self.multiple = np.where(flat, 0.0, (xj_a - xi_a) / np.where(flat, 1.0, dy))
        self.constant = xi_a - self.yi * self.multiple
        self.offsets = np.array(offsets)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Even-odd inclusion in the union, one bool per point."""
        if not self.polygons:
            return np.zeros(len(points), dtype=bool)
        px = points[:, 0:1]
        py = points[:, 1:2]
        crosses = (self.yi[None, :] > py) != (self.yj[None, :] > py)
        crosses &= px < py * self.multiple[None, :] + self.constant[None, :]
        counts = np.add.reduceat(crosses, self.offsets[:-1], axis=1)
        return ((counts % 2) == 1).any(axis=1)


def point_near_polygon(point: np.ndarray, polygon: np.ndarray, tol: float) -> bool:
    """True if the point is inside the polygon or within tol of its boundary."""
    if bool(points_in_polygon(point[None, :], polygon)[0]):
        return True
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    return bool((segment_distances(point[None, :], a, b) <= tol).any())


def segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from (N, 2) points to (M, 2)-(M, 2) segments, shape (N, M)."""
    dx = b[:, 0] - a[:, 0]
    dy = b[:, 1] - a[:, 1]
    len2 = dx * dx + dy * dy
    len2 = np.where(len2 < 1e-18, 1.0, len2)
    rx = points[:, 0:1] - a[None, :, 0]
    ry = points[:, 1:2] - a[None, :, 1]
    t = (rx * dx[None, :] + ry * dy[None, :]) / len2[None, :]
    t = np.clip(t, 0.0, 1.0)
    ex = rx - t * dx[None, :]
    ey = ry - t * dy[None, :]
    return np.sqrt(ex * ex + ey * ey)


def distance_to_polyline(points: np.ndarray, path_vertices: np.ndarray) -> np.ndarray:
    """Minimum distance from each point to a polyline's segments."""
    a = path_vertices[:-1]
    b = path_vertices[1:]
    return segment_distances(points, a, b).min(axis=1)
