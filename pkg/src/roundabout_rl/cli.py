"""Command-line entry point.

Subcommands: train-passive, train-active, evaluate, compare, render,
map-validate, dump-config. Every run resolves its configuration (defaults,
then --config file, then --set overrides, then --seed/--workers), creates a
run directory under the output root and echoes the resolved config there.

Exit codes: 0 success, 1 usage error (help printed), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

log = logging.getLogger("roundabout_rl")

OUT_ROOT_ENV = "ROUNDABOUT_RL_RUNS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="roundabout-rl", description=__doc__)
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="JSON run-config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value (dotted path)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--workers", type=int, help="worker thread count (1 = bit-exact)")
        sp.add_argument("--out", help="run name (directory under the output root)")

    sp = sub.add_parser("train-passive", help="train the traffic policy on all scenarios")
    common(sp)

    sp = sub.add_parser("train-active", help="train the inserting agent across environments")
    common(sp)
    sp.add_argument("--passive-checkpoint", help="frozen traffic policy (.npz)")
    sp.add_argument("--scripted-passives", choices=["gap", "constant"],
                    help="use a scripted traffic controller instead of a checkpoint")

    sp = sub.add_parser("evaluate", help="run the metric protocol on one scenario")
    common(sp)
    sp.add_argument("--map", default="test_roundabout", help="bundled map name or file path")
    sp.add_argument("--traffic", default="high", choices=["low", "medium", "high"])
    sp.add_argument("--episodes", type=int, default=3000)
    sp.add_argument("--checkpoint", required=True, help="inserting-agent weights (.npz)")
    sp.add_argument("--passive-checkpoint", help="trained traffic weights (.npz)")
    sp.add_argument("--noise-at-eval", action="store_true")
    sp.add_argument("--max-passives", type=int, help="override the traffic table")

    sp = sub.add_parser("compare", help="tabulate metric summaries side by side")
    common(sp)
    sp.add_argument("reports", nargs="+", metavar="NAME=SUMMARY.json",
                    help="named summary files produced by evaluate")

    sp = sub.add_parser("render", help="render one episode to PNG frames")
    common(sp)
    sp.add_argument("--map", default="test_roundabout")
    sp.add_argument("--checkpoint", help="policy checkpoint; random commands if omitted")
    sp.add_argument("--traffic", default="low", choices=["low", "medium", "high"])

    sp = sub.add_parser("map-validate", help="validate a map file and print its layout")
    common(sp)
    sp.add_argument("map", help="bundled map name or file path")

    sp = sub.add_parser("dump-config", help="print the fully resolved configuration")
    common(sp)
    return p


def resolve_config(args) -> "RunConfig":
    from .config import RunConfig, apply_overrides, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    import dataclasses

    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
        updates["train"] = dataclasses.replace(cfg.train, master_seed=args.seed)
        updates["passive_train"] = dataclasses.replace(cfg.passive_train, master_seed=args.seed)
    if args.workers is not None:
        updates["workers"] = args.workers
        updates["train"] = dataclasses.replace(
            updates.get("train", cfg.train), workers=args.workers
        )
    return dataclasses.replace(cfg, **updates) if updates else cfg


def make_run_dir(cfg, args) -> Path:
    root = Path(os.environ.get(OUT_ROOT_ENV, cfg.out_root))
    name = args.out or f"{time.strftime('%Y%m%d-%H%M%S')}-{args.command}"
    run_dir = root / name
    run_dir.mkdir(parents=True, exist_ok=True)
    from .config import dump_config

    dump_config(cfg, run_dir / "config.json")
    return run_dir


def _setup(cfg):
    from .environment import ConstantSpeedController, GapKeepingController
    from .orchestrator import TrainSetup

    return TrainSetup(
        sim=cfg.sim, noise=cfg.noise, percep=cfg.perception,
        reward=cfg.reward, learner=cfg.learner, env_cfg=cfg.env,
    ), {"gap": GapKeepingController, "constant": ConstantSpeedController}


def cmd_train_passive(args) -> int:
    from .learner import save_checkpoint
    from .orchestrator import ProgressLog, train_passives

    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, args)
    setup, _ = _setup(cfg)
    progress = ProgressLog(run_dir / "progress.jsonl")
    store, ratios = train_passives(cfg.passive_train, setup, cfg.passive_network(),
                                   progress=progress)
    progress.close()
    params, sq, version = store.state()
    out = run_dir / "passive_checkpoint.npz"
    save_checkpoint(out, params, sq, version, cfg.passive_train.master_seed,
                    meta={"kind": "passive", "profile": cfg.network_profile})
    print(f"passive checkpoint written to {out} (version {version}, "
          f"final positive ratio {ratios[-1]:.3f})")
    return 0


def cmd_train_active(args) -> int:
    from .environment import PolicyPassiveController
    from .learner import load_checkpoint, save_checkpoint
    from .orchestrator import ProgressLog, train_active

    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, args)
    setup, scripted = _setup(cfg)
    if args.passive_checkpoint:
        ckpt = load_checkpoint(args.passive_checkpoint)
        pcfg = cfg.passive_network()
        setup.passive_controller_factory = lambda: PolicyPassiveController(
            ckpt.params, pcfg, cfg.perception
        )
    elif args.scripted_passives:
        setup.passive_controller_factory = scripted[args.scripted_passives]
    else:
        raise UsageError("train-active needs --passive-checkpoint or --scripted-passives")
    progress = ProgressLog(run_dir / "progress.jsonl")
    result = train_active(cfg.train, setup, cfg.active_network(), progress=progress)
    progress.close()
    out = run_dir / "best_checkpoint.npz"
    save_checkpoint(out, result.best.params, {k: np.zeros_like(v) for k, v in result.best.params.items()},
                    result.best.version, cfg.train.master_seed,
                    meta={"kind": "active", "profile": cfg.network_profile,
                          "validation_reaches": result.best.validation_reaches})
    print(f"best checkpoint written to {out} "
          f"(validation reaches {result.best.validation_reaches:.3f})")
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import (
        ExperimentConfig, run_experiment, write_episode_csv, write_summary_json,
    )

    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, args)
    exp = ExperimentConfig(
        map_name=args.map,
        checkpoint=args.checkpoint,
        passive_checkpoint=args.passive_checkpoint,
        n_episodes=args.episodes,
        traffic_level=args.traffic,
        max_passives=args.max_passives,
        noise_at_eval=args.noise_at_eval,
        seed=cfg.seed,
    )
    report = run_experiment(exp, net_cfg=cfg.active_network(), percep=cfg.perception,
                            env_cfg=cfg.env)
    write_episode_csv(report, run_dir / "episodes.csv")
    write_summary_json(report, exp, run_dir / "summary.json")
    print(f"reaches {report.reaches_pct:.3f}  crashes {report.crashes_pct:.3f}  "
          f"total steps {report.total_steps:.3f}  -> {run_dir}")
    return 0


def cmd_compare(args) -> int:
    import json

    from .evaluation import MetricsReport, compare_models

    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, args)
    reports = {}
    for item in args.reports:
        if "=" not in item:
            raise UsageError(f"expected NAME=SUMMARY.json, got {item!r}")
        name, path = item.split("=", 1)
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        m = doc["metrics"]
        reports[name] = MetricsReport(
            n_episodes=m["n_episodes"], reaches_pct=m["reaches_pct"],
            crashes_pct=m["crashes_pct"], total_steps=m["total_steps"],
            steps_sum=m["steps_sum"],
        )
    table = compare_models(reports)
    (run_dir / "comparison.csv").write_text(table.to_csv(), encoding="utf-8")
    (run_dir / "comparison.txt").write_text(table.to_text(), encoding="utf-8")
    print(table.to_text(), end="")
    return 0


def cmd_render(args) -> int:
    from .evaluation import (
        ExperimentConfig, GreedyPolicy, RandomPolicy, build_eval_env,
    )
    from .learner import load_checkpoint
    from .render import render_episode
    from .seeding import NS_EVALUATION, derive_rng

    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, args)
    exp = ExperimentConfig(map_name=args.map, traffic_level=args.traffic, seed=cfg.seed,
                           checkpoint=args.checkpoint)
    env = build_eval_env(exp, percep=cfg.perception, env_cfg=cfg.env)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        policy = GreedyPolicy(ckpt.params, cfg.active_network())
    else:
        policy = RandomPolicy()
    steps, status = render_episode(env, policy, derive_rng(cfg.seed, NS_EVALUATION, 0),
                                   run_dir / "frames")
    print(f"episode ended {status.value} after {steps} steps; frames in {run_dir / 'frames'}")
    return 0


def cmd_map_validate(args) -> int:
    from .maps import resolve_map

    m = resolve_map(args.map)
    print(f"{m.name}: kind={m.kind} entry lanes={m.n_entries} "
          f"traffic paths={len(m.traffic_paths())} spawn slots={len(m.passive_spawn_points)}")
    return 0


def cmd_dump_config(args) -> int:
    from .config import dump_config

    print(dump_config(resolve_config(args)))
    return 0


COMMANDS = {
    "train-passive": cmd_train_passive,
    "train-active": cmd_train_active,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "render": cmd_render,
    "map-validate": cmd_map_validate,
    "dump-config": cmd_dump_config,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help()
            return 1
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1
    except Exception as exc:  # runtime failure, diagnostic + exit 2
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
