#!/usr/bin/env python
"""Generate the golden forward-pass fixture used by the network tests.

Run once; the committed file pins the documented summation order so any
change to the forward pass that alters results is caught bit-for-bit.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from roundabout_rl.network import forward, init_params, mini_network_config


def main() -> int:
    cfg = mini_network_config(4)
    rng = np.random.default_rng(2718)
    params = init_params(cfg, rng)
    frames = rng.integers(0, 2, size=(1, cfg.in_channels, cfg.in_hw, cfg.in_hw)).astype(float)
    nonvis = rng.uniform(0, 1, size=(1, cfg.nonvisual_dim))
    value, policy = forward(params, cfg, frames, nonvis)
    out = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_forward.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(out, value=value, policy=policy)
    print(f"wrote {out}: value={value} policy={policy}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
