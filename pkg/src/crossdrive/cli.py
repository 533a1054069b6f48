"""Command-line entry point: train, eval, compare, bench, render.

Every command exits 0 on success and nonzero with a single-line diagnostic on
failure; all file output stays under --out. Worker counts come from
--workers, falling back to the CROSSDRIVE_WORKERS environment variable and
then to the machine's CPU count; --workers 1 makes runs bit-deterministic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .env import DIFFICULTY_CODES
from .evaluation import (ExperimentSpec, bench_runtime, compare_controllers,
                         format_report, run_experiment, write_results)
from .pipeline import MPC_RL, PURE_MPC, PURE_PPO, Controller
from .render import RecordLoadError, load_episode_steps, render_steps
from .rl.checkpoint import load_checkpoint
from .rl.nets import ENDTOEND, SPEEDREF
from .rl.ppo import PPOConfig
from .rl.training import TrainingError, train
from .scenario import SCENARIO_CODES

CONTROLLER_FLAGS = {"mpc": PURE_MPC, "ppo": PURE_PPO, "mpcrl": MPC_RL}
CHECKPOINT_MODES = {PURE_PPO: ENDTOEND, MPC_RL: SPEEDREF}


class CliError(RuntimeError):
    pass


def _default_workers() -> int:
    env = os.environ.get("CROSSDRIVE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"CROSSDRIVE_WORKERS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    updates = {}
    if getattr(args, "scenario", None):
        updates["scenario"] = args.scenario
    if getattr(args, "difficulty", None) and args.difficulty != "all":
        updates["difficulty"] = args.difficulty
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _build_controller(kind: str, cfg: RunConfig, checkpoint: str | None,
                      parser: argparse.ArgumentParser) -> Controller:
    policy = None
    if kind in CHECKPOINT_MODES:
        if checkpoint is None:
            flag = next(k for k, v in CONTROLLER_FLAGS.items() if v == kind)
            parser.error(f"--controller {flag} requires --checkpoint")
        policy = load_checkpoint(checkpoint)
        wanted = CHECKPOINT_MODES[kind]
        if policy.mode != wanted:
            raise CliError(f"checkpoint {checkpoint} holds a {policy.mode} "
                           f"policy; {kind} needs {wanted}")
    return Controller(kind=kind, policy=policy, mpc_cfg=cfg.mpc,
                      safety_cfg=cfg.safety)


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    ppo_cfg = PPOConfig(total_steps=args.steps, batch_size=args.batch_size)

    def progress(record):
        reward = record["mean_episode_reward"]
        reward_txt = "n/a" if reward is None else f"{reward:.1f}"
        print(f"[train] update {record['update_index']} "
              f"steps {record['env_steps']} "
              f"total_loss {record['total_loss']:.3f} "
              f"mean_ep_reward {reward_txt}", file=sys.stderr, flush=True)

    result = train(cfg, args.mode, ppo_cfg, cfg.seed, args.out,
                   checkpoint_every=args.checkpoint_every,
                   resume=args.resume, on_update=progress)
    print(f"trained {result.env_steps} steps, {result.updates} updates; "
          f"checkpoint at {result.checkpoint_path}")
    return 0


def _record_writer(records_path: Path, traces_path: Path | None):
    records_file = records_path.open("w")
    traces_file = traces_path.open("w") if traces_path else None

    def sink(record):
        records_file.write(record.to_json() + "\n")
        if traces_file is not None:
            for line in record.trace_lines():
                traces_file.write(line + "\n")

    def close():
        records_file.close()
        if traces_file is not None:
            traces_file.close()

    return sink, close


def _run_and_write(spec: ExperimentSpec, out: Path, workers: int,
                   with_traces: bool):
    out.mkdir(parents=True, exist_ok=True)
    sink, close = _record_writer(out / "records.jsonl",
                                 out / "traces.jsonl" if with_traces else None)
    try:
        result = run_experiment(spec, workers=workers, record_sink=sink,
                                keep_records=False)
    finally:
        close()
    comparisons = (compare_controllers(result.table)
                   if len(spec.controllers) > 1 else [])
    write_results(out / "results.jsonl", result.table, comparisons)
    for failure in result.failures:
        print(f"episode failed: {failure.label} {failure.difficulty} "
              f"#{failure.episode_index}: {failure.error}", file=sys.stderr)
    return result, comparisons


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    kind = CONTROLLER_FLAGS[args.controller]
    controller = _build_controller(kind, cfg, args.checkpoint, args.parser)
    spec = ExperimentSpec(scenario=cfg.scenario,
                          difficulties=(cfg.difficulty,),
                          controllers=((kind, controller),),
                          episodes=args.episodes, base_seed=cfg.seed,
                          run_cfg=cfg)
    result, _ = _run_and_write(spec, Path(args.out), args.workers,
                               args.traces)
    cell = result.table.cell(kind, cfg.difficulty)
    print(f"{cfg.scenario} {cfg.difficulty} {kind}: "
          f"success {cell.success}/{cell.episodes} "
          f"collision {cell.collision} offroad {cell.offroad} "
          f"timeout {cell.timeout}")
    return 1 if result.failures else 0


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    names = [n.strip() for n in args.controllers.split(",") if n.strip()]
    if not names:
        args.parser.error("--controllers must name at least one controller")
    controllers = []
    for name in names:
        if name not in CONTROLLER_FLAGS:
            args.parser.error(f"unknown controller {name!r} "
                              f"(choose from {', '.join(CONTROLLER_FLAGS)})")
        kind = CONTROLLER_FLAGS[name]
        checkpoint = {PURE_PPO: args.ppo_checkpoint,
                      MPC_RL: args.mpcrl_checkpoint}.get(kind)
        if kind in CHECKPOINT_MODES and checkpoint is None:
            flag = "--ppo-checkpoint" if kind == PURE_PPO else "--mpcrl-checkpoint"
            args.parser.error(f"controller {name} requires {flag}")
        controllers.append((kind, _build_controller(kind, cfg, checkpoint,
                                                    args.parser)))
    difficulties = (tuple(DIFFICULTY_CODES) if args.difficulty == "all"
                    else (cfg.difficulty,))
    spec = ExperimentSpec(scenario=cfg.scenario, difficulties=difficulties,
                          controllers=tuple(controllers),
                          episodes=args.episodes, base_seed=cfg.seed,
                          run_cfg=cfg)
    result, comparisons = _run_and_write(spec, Path(args.out), args.workers,
                                         args.traces)
    report = format_report(result.table, comparisons)
    (Path(args.out) / "report.txt").write_text(report)
    print(report, end="")
    return 1 if result.failures else 0


def cmd_bench(args) -> int:
    cfg = _resolve_config(args)
    kind = CONTROLLER_FLAGS[args.controller]
    controller = _build_controller(kind, cfg, args.checkpoint, args.parser)
    stats = bench_runtime(controller, scenario=cfg.scenario,
                          n_steps=args.steps, difficulty=cfg.difficulty,
                          base_seed=cfg.seed, run_cfg=cfg)
    print(f"{kind} on {cfg.scenario}/{cfg.difficulty}: "
          f"mean {stats.mean_ms:.2f} ms  std {stats.std_ms:.2f} ms  "
          f"median {stats.median_ms:.2f} ms  ({stats.samples} steps)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"controller": kind, "scenario": cfg.scenario,
                   "difficulty": cfg.difficulty, "mean_ms": stats.mean_ms,
                   "std_ms": stats.std_ms, "median_ms": stats.median_ms,
                   "samples": stats.samples}
        (out / "bench.json").write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_render(args) -> int:
    cfg = _resolve_config(args)
    scenario_name, episode_id, rows = load_episode_steps(
        args.episode_record, args.episode_id)
    written = render_steps(scenario_name, rows, args.out,
                           lane_width=cfg.lane_width_m)
    print(f"rendered {len(written)} frames of {episode_id} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossdrive",
        description="Hybrid MPC + RL driving stack: training, evaluation, "
                    "benchmarking, and trajectory rendering.")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH",
                        help="YAML run configuration")
    shared.add_argument("--seed", type=int, metavar="N",
                        help="override the config seed")

    workers = argparse.ArgumentParser(add_help=False)
    workers.add_argument("--workers", type=int, default=None, metavar="N",
                         help="episode worker processes "
                              "(default: CROSSDRIVE_WORKERS or CPU count)")

    p = sub.add_parser("train", parents=[shared],
                       help="train a policy with PPO")
    p.add_argument("--mode", choices=[SPEEDREF, ENDTOEND], required=True)
    p.add_argument("--steps", type=int, required=True,
                   help="total environment steps")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--batch-size", type=int, default=4096)
    p.add_argument("--checkpoint-every", type=int, default=10,
                   metavar="UPDATES")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared, workers],
                       help="run one controller over seeded episodes")
    p.add_argument("--controller", choices=sorted(CONTROLLER_FLAGS),
                   required=True)
    p.add_argument("--scenario", choices=sorted(SCENARIO_CODES))
    p.add_argument("--difficulty", choices=sorted(DIFFICULTY_CODES))
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--checkpoint", metavar="PATH",
                   help="policy checkpoint (ppo and mpcrl)")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--traces", action="store_true",
                   help="also write the per-step trace sidecar")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[shared, workers],
                       help="run several controllers on paired seeds")
    p.add_argument("--controllers", default="mpc,mpcrl",
                   help="comma-separated subset of mpc,ppo,mpcrl")
    p.add_argument("--scenario", choices=sorted(SCENARIO_CODES))
    p.add_argument("--difficulty",
                   choices=sorted(DIFFICULTY_CODES) + ["all"], default="all")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--mpcrl-checkpoint", metavar="PATH")
    p.add_argument("--ppo-checkpoint", metavar="PATH")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--traces", action="store_true",
                   help="also write the per-step trace sidecar")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", parents=[shared],
                       help="time control_step for one controller")
    p.add_argument("--controller", choices=sorted(CONTROLLER_FLAGS),
                   required=True)
    p.add_argument("--scenario", choices=sorted(SCENARIO_CODES))
    p.add_argument("--difficulty", choices=sorted(DIFFICULTY_CODES))
    p.add_argument("--steps", type=int, default=200,
                   help="timed steps after warm-up")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--out", metavar="DIR",
                   help="also write bench.json here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", parents=[shared],
                       help="draw SVG frames from a recorded episode")
    p.add_argument("--episode-record", required=True, metavar="PATH")
    p.add_argument("--episode-id", metavar="ID",
                   help="episode to draw when the file holds several")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_render)

    for name, sp in sub.choices.items():
        sp.set_defaults(parser=sp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        try:
            args.workers = _default_workers()
        except CliError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    try:
        return args.func(args)
    except (CliError, ConfigError, TrainingError, RecordLoadError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
