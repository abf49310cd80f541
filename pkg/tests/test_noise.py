import numpy as np
import pytest

from roundabout_rl.geometry import PathPolyline
from roundabout_rl.maps import load_bundled_map
from roundabout_rl.noise import (
    NoiseConfig,
    OffsetSpan,
    apply_offset_profile,
    maybe_reshape,
    perturb_path_bezier,
    perturb_perception,
    sample_offset_spans,
)
from roundabout_rl.simulation import AgentState, Role
from oracles import hausdorff_distance


def ring_path(radius=20.0, n=200):
    theta = np.linspace(0, 2 * np.pi, n + 1)
    return PathPolyline(np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1))


def passive(s, path_id=0):
    return AgentState(path_id=path_id, s=s, v=8.0, target_speed=8.0,
                      aggressiveness=0.5, role=Role.PASSIVE)


def test_zero_sigma_perception_is_identity():
    path = ring_path()
    states = [passive(3.0), passive(60.0)]
    cfg = NoiseConfig(sigma_pos=0.0, sigma_size=0.0, sigma_heading=0.0, p_dropout=0.0)
    out = perturb_perception(states, [path], cfg, np.random.default_rng(0))
    for st, pv in zip(states, out):
        truth, heading = path.pose_at(st.s)
        assert (pv.center.x, pv.center.y) == (truth.x, truth.y)
        assert pv.heading == heading
        assert pv.footprint == st.footprint
        assert pv.detected


def test_full_dropout_hides_everything_but_keeps_vehicles():
    path = ring_path()
    states = [passive(3.0), passive(60.0)]
    cfg = NoiseConfig(p_dropout=1.0)
    out = perturb_perception(states, [path], cfg, np.random.default_rng(0))
    assert all(not pv.detected for pv in out)
    assert len(out) == len(states)  # still physically present
    from roundabout_rl.perception import PerceptionConfig, rasterize_obstacles, ObserverFrame
    from roundabout_rl.geometry import Point2

    layer = rasterize_obstacles(
        ObserverFrame.from_pose(Point2(20, 0), np.pi / 2), out, PerceptionConfig()
    )
    assert layer.grid.sum() == 0


def test_perception_noise_statistics():
    # Sample sigma within 2% of 0.3; mean within 3 standard errors of 0.
    path = PathPolyline(np.array([[0.0, 0.0], [1000.0, 0.0]]))
    cfg = NoiseConfig(sigma_pos=0.3)
    rng = np.random.default_rng(0)
    n = 100_000
    states = [passive(500.0)]
    errs = np.empty(n)
    for i in range(n):
        pv = perturb_perception(states, [path], cfg, rng)[0]
        errs[i] = pv.center.x - 500.0
    assert abs(errs.mean()) <= 3.0 * 0.3 / np.sqrt(n)
    assert abs(errs.std(ddof=1) - 0.3) <= 0.02 * 0.3


def test_dropout_frequency():
    path = PathPolyline(np.array([[0.0, 0.0], [1000.0, 0.0]]))
    cfg = NoiseConfig(p_dropout=0.05)
    rng = np.random.default_rng(0)
    n = 100_000
    states = [passive(500.0)]
    drops = sum(
        not perturb_perception(states, [path], cfg, rng)[0].detected for i in range(n)
    )
    assert abs(drops / n - 0.05) <= 0.01 * 0.05


def test_footprint_clamped_to_minimum():
    path = PathPolyline(np.array([[0.0, 0.0], [1000.0, 0.0]]))
    cfg = NoiseConfig(sigma_size=50.0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        pv = perturb_perception([passive(500.0)], [path], cfg, rng)[0]
        assert pv.footprint.length >= 0.5 and pv.footprint.width >= 0.5


def test_zero_magnitude_path_perturbation_is_near_identity():
    path = ring_path()
    cfg = NoiseConfig(path_magnitude=0.0)
    out = perturb_path_bezier(path, cfg, np.random.default_rng(0))
    assert hausdorff_distance(out.vertices, path.vertices, step=0.05) < 1e-6


def test_path_perturbation_preserves_global_endpoints_exactly():
    path = ring_path()
    out = perturb_path_bezier(path, NoiseConfig(path_magnitude=1.5), np.random.default_rng(3))
    np.testing.assert_array_equal(out.vertices[0], path.vertices[0])
    np.testing.assert_array_equal(out.vertices[-1], path.vertices[-1])


def test_path_perturbation_deviation_bound():
    # Offset profile peaks at 0.75 * magnitude (dense-sampled Bernstein bound).
    path = PathPolyline(np.array([[0.0, 0.0], [200.0, 0.0]]))
    magnitude = 1.5
    t = np.linspace(0, 1, 100_001)
    bound = float(np.max(3 * t * (1 - t) ** 2 + 3 * t**2 * (1 - t)))
    out = perturb_path_bezier(
        path, NoiseConfig(path_magnitude=magnitude), np.random.default_rng(5)
    )
    deviation = np.abs(out.vertices[:, 1]).max()
    assert deviation <= magnitude * bound + 1e-9
    assert deviation > 0.05  # the perturbation actually does something


def test_path_perturbation_deterministic():
    path = ring_path()
    cfg = NoiseConfig(path_magnitude=1.5)
    a = perturb_path_bezier(path, cfg, np.random.default_rng(11))
    b = perturb_path_bezier(path, cfg, np.random.default_rng(11))
    np.testing.assert_array_equal(a.vertices, b.vertices)


def test_path_too_short_rejected():
    short = PathPolyline(np.array([[0.0, 0.0], [5.0, 0.0]]))
    with pytest.raises(ValueError):
        perturb_path_bezier(short, NoiseConfig(), np.random.default_rng(0))


def test_offset_spans_c1_at_joints():
    rng = np.random.default_rng(9)
    spans = sample_offset_spans(100.0, 1.5, rng)
    assert len(spans) == 5
    for a, b in zip(spans, spans[1:]):
        assert abs(a.end_slope() - b.start_slope()) < 1e-9


def test_offset_span_profile_zero_at_ends():
    span = OffsetSpan(0.0, 20.0, 1.0, -0.7)
    assert span.offset(0.0) == 0.0
    assert span.offset(1.0) == 0.0


def test_apply_offset_profile_zero_is_exact_on_refined_geometry():
    path = PathPolyline(np.array([[0.0, 0.0], [30.0, 0.0], [30.0, 40.0]]))
    spans = [OffsetSpan(0.0, 35.0, 0.0, 0.0), OffsetSpan(35.0, 70.0, 0.0, 0.0)]
    out = apply_offset_profile(path, spans)
    assert hausdorff_distance(out.vertices, path.vertices, step=0.02) < 1e-12


def test_maybe_reshape_period_trigger():
    m = load_bundled_map("training_1")
    cfg = NoiseConfig()
    rng = np.random.default_rng(0)
    unchanged = maybe_reshape(999, m, cfg, rng)
    assert unchanged is m
    reshaped = maybe_reshape(1000, m, cfg, rng)
    assert reshaped is not m
    for old, new in zip(m.entry_lanes, reshaped.entry_lanes):
        np.testing.assert_array_equal(
            old.centerline.vertices[-1], new.centerline.vertices[-1]
        )
        assert np.abs(new.centerline.vertices[1] - old.centerline.vertices[1]).max() > 0
    # Stop lines still sit on the (unchanged) lane ends.
    for lane, stop in zip(reshaped.entry_lanes, reshaped.stop_lines):
        end = lane.centerline.vertices[-1]
        mid = 0.5 * (stop[0] + stop[1])
        assert np.linalg.norm(mid - end) <= lane.width


def test_maybe_reshape_disabled():
    m = load_bundled_map("training_1")
    cfg = NoiseConfig(reshape_enabled=False)
    for ep in (0, 1000, 2000):
        assert maybe_reshape(ep, m, cfg, np.random.default_rng(0)) is m


def test_maybe_reshape_rebuilds_navigable_band():
    m = load_bundled_map("training_1")
    reshaped = maybe_reshape(0, m, NoiseConfig(reshape_magnitude=2.0), np.random.default_rng(4))
    from roundabout_rl.geometry import point_near_polygon

    nav = reshaped.effective_navigable()
    for lane in reshaped.entry_lanes:
        for v in lane.centerline.vertices:
            assert any(point_near_polygon(v, poly, 0.1) for poly in nav)
