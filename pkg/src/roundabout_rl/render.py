"""Top-view episode rendering for debugging and demos.

Composite frames draw the navigable area, paths, stop lines and vehicle
footprints; the four semantic layers of the inserting agent are exported
through the perception module's PNG writer so both outputs stay
byte-identical for the same snapshot.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .environment import InsertionEnv
from .perception import layer_filename, save_layer_png
from .simulation import EpisodeStatus, World

BACKGROUND = (34, 34, 34)
ASPHALT = (90, 90, 96)
RING = (140, 140, 150)
ROUTE = (80, 160, 90)
STOP = (200, 60, 60)
ACTIVE = (60, 200, 90)
PASSIVE = (80, 120, 220)


def _world_bounds(world: World, pad: float = 10.0):
    pts = [np.asarray(poly) for poly in world.scenario.effective_navigable()]
    pts += [p.vertices for p in world.paths]
    all_pts = np.vstack(pts)
    lo = all_pts.min(axis=0) - pad
    hi = all_pts.max(axis=0) + pad
    return lo, hi


def render_world(world: World, size: int = 640) -> Image.Image:
    """One composite top-view frame of the current simulation state."""
    lo, hi = _world_bounds(world)
    span = float(max(hi - lo))
    scale = size / span

    def to_px(xy: np.ndarray):
        p = (np.asarray(xy) - lo) * scale
        return [(float(x), float(size - y)) for x, y in np.atleast_2d(p)]

    img = Image.new("RGB", (size, size), BACKGROUND)
    draw = ImageDraw.Draw(img)
    for poly in world.scenario.effective_navigable():
        draw.polygon(to_px(poly), fill=ASPHALT)
    for path in world.scenario.traffic_paths():
        draw.line(to_px(path.vertices), fill=RING, width=1)
    if world.active is not None:
        draw.line(to_px(world.path_of(world.active).vertices), fill=ROUTE, width=1)
    for seg in world.scenario.stop_lines:
        draw.line(to_px(seg), fill=STOP, width=2)
    for p in world.passives:
        draw.polygon(to_px(world.rect_of(p)), fill=PASSIVE)
    if world.active is not None:
        draw.polygon(to_px(world.rect_of(world.active)), fill=ACTIVE)
    return img


def render_episode(
    env: InsertionEnv,
    policy,
    rng: np.random.Generator,
    out_dir: str | Path,
    episode: int = 0,
    size: int = 640,
) -> tuple[int, EpisodeStatus]:
    """Run one episode, writing a composite PNG plus the four layer PNGs
    per step. Returns (steps, outcome)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    obs = env.reset(rng)
    done = False
    step = 0
    _dump_frame(env, episode, step, out, size)
    status = EpisodeStatus.RUNNING
    while not done:
        action = policy(obs, rng)
        obs, _reward, done, info = env.step(action)
        step = env.world.step_count
        _dump_frame(env, episode, step, out, size)
        if done:
            status = info["status"]
    return step, status


def _dump_frame(env: InsertionEnv, episode: int, step: int, out: Path, size: int) -> None:
    render_world(env.world, size=size).save(out / f"{episode}_{step}_view.png")
    for layer in env._history[-1]:
        save_layer_png(layer, out / layer_filename(episode, step, layer.channel))
