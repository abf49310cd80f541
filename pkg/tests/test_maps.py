import json

import numpy as np
import pytest

from roundabout_rl.geometry import PathPolyline
from roundabout_rl.maps import (
    BUNDLED_MAPS,
    JunctionMap,
    MapValidationError,
    RoundaboutMap,
    bundled_map_path,
    load_bundled_map,
    load_map,
    make_junction_map,
    make_roundabout_map,
    map_from_json,
    map_to_json,
    merge_arclength,
    save_map,
)


def test_bundled_training_1_has_four_entries():
    m = load_bundled_map("training_1")
    assert isinstance(m, RoundaboutMap)
    assert m.n_entries == 4


def test_bundled_training_3_has_three_entries():
    assert load_bundled_map("training_3").n_entries == 3


def test_all_bundled_maps_load_and_validate():
    for name in BUNDLED_MAPS:
        m = load_bundled_map(name)
        assert m.name == name


def test_stop_line_count_mismatch_names_both_counts(tmp_path):
    doc = map_to_json(load_bundled_map("training_1"))
    doc["stop_lines"] = doc["stop_lines"][:-1]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(MapValidationError, match=r"3 stop lines for 4 entry lanes"):
        load_map(path)


def test_empty_file_is_a_parse_error(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    with pytest.raises(MapValidationError, match="parse error"):
        load_map(path)


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "kind": "roundabout",\n oops\n}')
    with pytest.raises(MapValidationError, match="line 3"):
        load_map(path)


def test_save_load_round_trip_geometry(tmp_path):
    for name in ("training_2", "junction"):
        m = load_bundled_map(name)
        out = tmp_path / f"{name}.json"
        save_map(m, out)
        again = load_map(out)
        for p, q in zip(m.traffic_paths(), again.traffic_paths()):
            np.testing.assert_array_equal(p.vertices, q.vertices)
        for a, b in zip(m.entry_lanes, again.entry_lanes):
            np.testing.assert_array_equal(a.centerline.vertices, b.centerline.vertices)
            assert a.width == b.width
        assert m.passive_spawn_points == again.passive_spawn_points


def test_stop_lines_lie_near_lane_ends():
    for name in BUNDLED_MAPS:
        m = load_bundled_map(name)
        for lane, stop in zip(m.entry_lanes, m.stop_lines):
            end = lane.centerline.vertices[-1]
            mid = 0.5 * (stop[0] + stop[1])
            assert np.linalg.norm(mid - end) <= lane.width


def test_spawn_slots_are_spaced_at_least_8m():
    for name in BUNDLED_MAPS:
        m = load_bundled_map(name)
        per_path: dict[int, list[float]] = {}
        for pi, s in m.passive_spawn_points:
            per_path.setdefault(pi, []).append(s)
        for pi, arcs in per_path.items():
            length = m.traffic_paths()[pi].length
            arcs = sorted(arcs)
            gaps = [b - a for a, b in zip(arcs, arcs[1:])]
            gaps.append(length - arcs[-1] + arcs[0])
            assert min(gaps) >= 8.0 - 1e-9


def test_entry_lane_ends_on_traffic_path():
    for name in BUNDLED_MAPS:
        m = load_bundled_map(name)
        for e in range(m.n_entries):
            pi, s = merge_arclength(m, e)
            path = m.traffic_paths()[pi]
            end = m.entry_lanes[e].centerline.vertices[-1]
            p = path.point_at(s)
            assert np.hypot(p.x - end[0], p.y - end[1]) < 1e-6


def test_junction_angle_validation():
    with pytest.raises(MapValidationError):
        make_junction_map(junction_angle=0.0)
    with pytest.raises(MapValidationError):
        make_junction_map(junction_angle=2.0)
    j = make_junction_map(junction_angle=0.6)
    assert isinstance(j, JunctionMap)
    assert j.junction_angle == 0.6


def test_unknown_kind_rejected():
    with pytest.raises(MapValidationError, match="unknown map kind"):
        map_from_json({"kind": "freeway", "name": "x"})


def test_make_roundabout_respects_entry_count():
    m = make_roundabout_map("tiny", 12.0, [0.3, 2.4, 4.4])
    assert m.n_entries == 3
    assert m.ring_paths[0].closed


def test_navigable_covers_ring_and_lanes():
    m = load_bundled_map("validation")
    from roundabout_rl.geometry import PolygonSet

    ps = PolygonSet(m.effective_navigable())
    ring = m.ring_paths[0]
    assert ps.contains(ring.vertices).all()


def test_map_file_is_utf8_json_with_schema_fields():
    doc = json.loads(bundled_map_path("training_1").read_text(encoding="utf-8"))
    for key in ("kind", "name", "ring_paths", "entry_lanes", "exit_lanes",
                "navigable_polygon", "stop_lines", "spawn_points"):
        assert key in doc
    jdoc = json.loads(bundled_map_path("junction").read_text(encoding="utf-8"))
    for key in ("highway_paths", "merge_lane", "junction_angle"):
        assert key in jdoc
