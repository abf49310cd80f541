"""Independent reference implementations used as test oracles.

These deliberately avoid the library's vectorized code paths: curves are
evaluated in closed Bernstein form or by dense sampling, occupancy grids by
per-cell scalar loops (numba-compiled for speed), returns by a literal
double loop, and gradients by central finite differences.

The grid oracles share only the cell-center convention with the library
(that convention is the contract under test is checked against); every
geometric predicate is an independent formulation.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# Bezier curves
# ---------------------------------------------------------------------------


def bernstein_point(ctrl: np.ndarray, t: float) -> np.ndarray:
    """Closed-form cubic Bernstein evaluation."""
    mt = 1.0 - t
    return (
        ctrl[0] * mt**3
        + ctrl[1] * 3 * t * mt**2
        + ctrl[2] * 3 * t**2 * mt
        + ctrl[3] * t**3
    )


def subdivision_point(ctrl: np.ndarray, t: float, depth: int = 48) -> np.ndarray:
    """Evaluate by repeated subdivision at t (de Casteljau split, kept side)."""
    ctrl = np.asarray(ctrl, dtype=float)
    lo, hi = 0.0, 1.0
    for _ in range(depth):
        mid_t = 0.5
        p01 = (1 - mid_t) * ctrl[0] + mid_t * ctrl[1]
        p12 = (1 - mid_t) * ctrl[1] + mid_t * ctrl[2]
        p23 = (1 - mid_t) * ctrl[2] + mid_t * ctrl[3]
        p012 = (1 - mid_t) * p01 + mid_t * p12
        p123 = (1 - mid_t) * p12 + mid_t * p23
        mid = (1 - mid_t) * p012 + mid_t * p123
        pivot = 0.5 * (lo + hi)
        if t <= pivot:
            ctrl = np.array([ctrl[0], p01, p012, mid])
            hi = pivot
        else:
            ctrl = np.array([mid, p123, p23, ctrl[3]])
            lo = pivot
    return 0.5 * (ctrl[0] + ctrl[3])


def dense_bezier_points(ctrl: np.ndarray, n: int = 100_000) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    mt = 1.0 - t
    return (
        ctrl[0] * mt**3
        + ctrl[1] * 3 * t * mt**2
        + ctrl[2] * 3 * t**2 * mt
        + ctrl[3] * t**3
    )


def dense_arclength(ctrl: np.ndarray, n: int = 100_000) -> float:
    pts = dense_bezier_points(ctrl, n)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def hausdorff_distance(a: np.ndarray, b: np.ndarray, step: float = 0.05) -> float:
    """Symmetric Hausdorff distance between two polylines (dense resampling)."""
    from scipy.spatial import cKDTree

    def densify(v):
        out = [v[0]]
        for p, q in zip(v[:-1], v[1:]):
            n = max(1, int(math.ceil(np.linalg.norm(q - p) / step)))
            for k in range(1, n + 1):
                out.append(p + (q - p) * (k / n))
        return np.array(out)

    da, db = densify(np.asarray(a)), densify(np.asarray(b))
    d_ab = cKDTree(db).query(da)[0].max()
    d_ba = cKDTree(da).query(db)[0].max()
    return float(max(d_ab, d_ba))


# ---------------------------------------------------------------------------
# Grid oracles (scalar per-cell loops)
# ---------------------------------------------------------------------------


def oracle_cell_centers(grid_n: int, window: float, origin, fwd) -> np.ndarray:
    """Cell centers under the shared window convention, scalar arithmetic.

    Mirrors the documented convention expression-for-expression so centers
    are bit-identical; everything computed *from* the centers is independent.
    """
    edge = window / grid_n
    left = (-fwd[1], fwd[0])
    out = np.empty((grid_n * grid_n, 2))
    i = 0
    for r in range(grid_n):
        f = window / 2.0 - (r + 0.5) * edge
        for c in range(grid_n):
            l = window / 2.0 - (c + 0.5) * edge
            out[i, 0] = origin[0] + f * fwd[0] + l * left[0]
            out[i, 1] = origin[1] + f * fwd[1] + l * left[1]
            i += 1
    return out


@njit(cache=True)
def oracle_obstacle_hits(cells: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Point-in-oriented-rectangle via four half-plane (corner cross) tests.

    rects rows: (cx, cy, heading, length, width).
    """
    n = len(cells)
    hit = np.zeros(n, dtype=np.bool_)
    for m in range(len(rects)):
        cx, cy, heading, length, width = rects[m]
        ch = math.cos(heading)
        sh = math.sin(heading)
        hl = length / 2.0
        hw = width / 2.0
        # Corners counter-clockwise.
        corners = np.empty((4, 2))
        corners[0, 0] = cx + hl * ch - hw * sh
        corners[0, 1] = cy + hl * sh + hw * ch
        corners[1, 0] = cx - hl * ch - hw * sh
        corners[1, 1] = cy - hl * sh + hw * ch
        corners[2, 0] = cx - hl * ch + hw * sh
        corners[2, 1] = cy - hl * sh - hw * ch
        corners[3, 0] = cx + hl * ch + hw * sh
        corners[3, 1] = cy + hl * sh - hw * ch
        for i in range(n):
            if hit[i]:
                continue
            px, py = cells[i, 0], cells[i, 1]
            inside = True
            for k in range(4):
                ax, ay = corners[k]
                bx, by = corners[(k + 1) % 4]
                cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
                if cross < 0.0:
                    inside = False
                    break
            if inside:
                hit[i] = True
    return hit


@njit(cache=True)
def oracle_polygon_hits(cells: np.ndarray, vertices: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Even-odd ray-cast inclusion in a union of polygons (textbook loop)."""
    n = len(cells)
    hit = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        px, py = cells[i, 0], cells[i, 1]
        for p in range(len(offsets) - 1):
            inside = False
            lo, hi = offsets[p], offsets[p + 1]
            j = hi - 1
            for k in range(lo, hi):
                xi, yi = vertices[k, 0], vertices[k, 1]
                xj, yj = vertices[j, 0], vertices[j, 1]
                if (yi > py) != (yj > py):
                    x_cross = (xj - xi) * (py - yi) / (yj - yi) + xi
                    if px < x_cross:
                        inside = not inside
                j = k
            if inside:
                hit[i] = True
                break
    return hit


@njit(cache=True)
def oracle_band_hits(cells: np.ndarray, verts: np.ndarray, half_width: float) -> np.ndarray:
    """Distance-to-polyline band via squared distances with branchy clamping.

    A single vertex degenerates to a disc around that point.
    """
    n = len(cells)
    hit = np.zeros(n, dtype=np.bool_)
    r2 = half_width * half_width
    for i in range(n):
        px, py = cells[i, 0], cells[i, 1]
        if len(verts) == 1:
            dx = px - verts[0, 0]
            dy = py - verts[0, 1]
            hit[i] = dx * dx + dy * dy <= r2
            continue
        for k in range(len(verts) - 1):
            ax, ay = verts[k, 0], verts[k, 1]
            bx, by = verts[k + 1, 0], verts[k + 1, 1]
            ex, ey = bx - ax, by - ay
            qx, qy = px - ax, py - ay
            dot = qx * ex + qy * ey
            len2 = ex * ex + ey * ey
            if dot <= 0.0 or len2 == 0.0:
                d2 = qx * qx + qy * qy
            elif dot >= len2:
                dx, dy = px - bx, py - by
                d2 = dx * dx + dy * dy
            else:
                t = dot / len2
                dx = qx - t * ex
                dy = qy - t * ey
                d2 = dx * dx + dy * dy
            if d2 <= r2:
                hit[i] = True
                break
    return hit


# ---------------------------------------------------------------------------
# Rectangle overlap by Monte-Carlo point sampling
# ---------------------------------------------------------------------------


def mc_rect_overlap(rect_a, rect_b, n: int, rng: np.random.Generator) -> bool:
    """True when sampled points of either rectangle land inside the other."""

    def sample_points(rect, m):
        cx, cy, heading, length, width = rect
        u = rng.uniform(-length / 2, length / 2, size=m)
        v = rng.uniform(-width / 2, width / 2, size=m)
        ch, sh = math.cos(heading), math.sin(heading)
        return np.stack([cx + u * ch - v * sh, cy + u * sh + v * ch], axis=1)

    for src, dst in ((rect_a, rect_b), (rect_b, rect_a)):
        pts = sample_points(src, n // 2)
        rects = np.array([dst])
        if oracle_obstacle_hits(pts, rects).any():
            return True
    return False


# ---------------------------------------------------------------------------
# Returns and gradients
# ---------------------------------------------------------------------------


def double_loop_returns(
    rewards, gamma: float, factor: float, bootstrap: float = 0.0
) -> np.ndarray:
    """Literal double-loop discounted sum with explicit powers."""
    rewards = np.asarray(rewards, dtype=float)
    T = len(rewards)
    out = np.empty(T)
    for t in range(T):
        acc = 0.0
        for k in range(t, T):
            acc += gamma ** (k - t) * rewards[k]
        out[t] = factor * acc + gamma ** (T - t) * bootstrap
    return out


def finite_difference_grads(loss_fn, params: dict, h: float = 1e-5) -> dict:
    """Central finite differences of a scalar loss over every parameter."""
    grads = {}
    for key, tensor in params.items():
        g = np.zeros_like(tensor)
        flat = tensor.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params)
            flat[i] = orig - h
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[key] = g
    return grads


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


def ramp_cruise_steps(v0: float, accel: float, vmax: float, dt: float, distance: float) -> int:
    """Steps for the semi-implicit ramp-then-cruise profile to cover distance.

    Mirrors v' = min(v + a dt, vmax); s' = s + v' dt exactly, by stepping the
    same recurrence in scalar form (the library never sees this loop).
    """
    s = 0.0
    v = v0
    steps = 0
    while s < distance:
        v = min(v + accel * dt, vmax)
        s += v * dt
        steps += 1
    return steps
