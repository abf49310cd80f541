#!/usr/bin/env python
"""Regenerate the bundled scenario maps.

Each roundabout approximates its real layout by topology only (one ring,
N tangent entry lanes); radii and angles are hand-picked so ring lengths,
entry counts and spawn capacity differ across scenarios.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from roundabout_rl.maps import make_junction_map, make_roundabout_map, save_map

LAYOUTS = {
    # name: (ring radius, entry angles, exit angles)
    "training_1": (22.0, [0.20, 1.80, 3.30, 4.90], [1.00, 2.60, 4.10, 5.70]),
    "training_2": (16.0, [0.60, 2.20, 3.60, 5.20], [1.40, 3.00, 4.40, 6.00]),
    "training_3": (20.0, [0.30, 2.40, 4.40], [1.30, 3.40, 5.40]),
    "training_4": (24.0, [0.10, 1.50, 3.20, 4.70], [0.80, 2.40, 3.90, 5.50]),
    "validation": (28.0, [0.40, 2.00, 3.50, 5.00], [1.20, 2.80, 4.30, 5.80]),
    "test_roundabout": (33.0, [0.25, 1.70, 3.30, 4.80], [1.00, 2.50, 4.00, 5.60]),
}


def main() -> int:
    out_dir = Path(__file__).resolve().parents[1] / "src" / "roundabout_rl" / "maps"
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (radius, entries, exits) in LAYOUTS.items():
        m = make_roundabout_map(name, radius, entries, exits)
        save_map(m, out_dir / f"{name}.json")
        ring_len = m.ring_paths[0].length
        print(f"{name}: R={radius} ring={ring_len:.1f} m entries={m.n_entries} "
              f"spawn slots={len(m.passive_spawn_points)}")
    j = make_junction_map()
    save_map(j, out_dir / "junction.json")
    print(f"junction: highway={j.highway_paths[0].length:.1f} m angle={j.junction_angle:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
