"""Command line entry point: generate-levels, train, eval, inspect."""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from sarlkit.config import ConfigError, RunConfig, from_ini, load_config, to_ini
from sarlkit.evaluation import evaluate, policy_fn
from sarlkit.grid import Action, CellKind, Env, LevelParseError, TaskKind, render
from sarlkit.levelgen import LevelGenerationError, LevelSpec, load_level, read_bank, write_bank
from sarlkit.policy import CheckpointError, load_checkpoint
from sarlkit.safety import ImpactTracker
from sarlkit.trainer import NumericalAbort, Trainer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("sarlkit")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sarlkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate-levels", help="write a level bank and manifest")
    gen.add_argument("--task", choices=[t.value for t in TaskKind], required=True)
    variant = gen.add_mutually_exclusive_group()
    variant.add_argument("--still", dest="dynamic", action="store_false")
    variant.add_argument("--dynamic", dest="dynamic", action="store_true")
    gen.add_argument("--n", type=_positive_int, required=True)
    gen.add_argument("--base-seed", type=int, default=10_000)
    gen.add_argument("--width", type=int, default=10)
    gen.add_argument("--height", type=int, default=10)
    gen.add_argument("--pattern-cells", type=int, default=8)
    gen.add_argument("--goal-markers", type=int, default=2)
    gen.add_argument("--spawners", type=int, default=None,
                     help="spawner count for dynamic levels (default 1)")
    gen.add_argument("--out", default="levels")
    gen.set_defaults(dynamic=False)

    train = sub.add_parser("train", help="train a policy from a config file")
    train.add_argument("config", nargs="?", help="INI config; defaults apply when omitted")
    train.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value, e.g. --set sarl.beta=0.005")
    train.add_argument("--algorithm", choices=["ppo", "penalty", "sarl"])
    train.add_argument("--master-seed", type=int)
    train.add_argument("--total-env-steps", type=int)
    train.add_argument("--run-dir")
    train.add_argument("--resume", action="store_true", help="continue from run-dir/state.pkl")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a level bank")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--bank", required=True, help="path to a bank manifest.json")
    ev.add_argument("--task", choices=[t.value for t in TaskKind],
                    help="task to score (default: the bank's task)")
    ev.add_argument("--cap", type=_positive_int, default=100)
    ev.add_argument("--T-stab", dest="T_stab", type=_positive_int, default=20)
    ev.add_argument("--sample", action="store_true", help="sample actions instead of argmax")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--csv", help="write per-episode rows to this file")

    ins = sub.add_parser("inspect", help="print an episode as ASCII frames")
    ins.add_argument("--level", required=True)
    ins.add_argument("--checkpoint", help="policy checkpoint; omit for the noop policy")
    ins.add_argument("--task", choices=[t.value for t in TaskKind], default="prune")
    ins.add_argument("--max-steps", type=_positive_int, default=100)
    ins.add_argument("--seed", type=int, default=0)
    ins.add_argument("--out", help="write the transcript here instead of stdout")
    return parser


# generate-levels

def cmd_generate_levels(args) -> int:
    n_spawners = args.spawners if args.spawners is not None else (1 if args.dynamic else 0)
    spec = LevelSpec(
        task=TaskKind(args.task), dynamic=args.dynamic, width=args.width, height=args.height,
        seed=args.base_seed, n_pattern_cells=args.pattern_cells,
        n_goal_markers=args.goal_markers, n_spawners=n_spawners,
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest = write_bank(args.out, spec, args.n, args.base_seed)
    print(f"wrote {args.n} levels to {manifest.parent} ({manifest.name})")
    return EXIT_OK


# train

def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides by round-tripping through the INI form."""
    if not assignments:
        return cfg
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(to_ini(cfg))
    for item in assignments:
        target, sep, value = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        if not cp.has_section(section):
            cp.add_section(section)
        cp[section][key] = value
    buf = io.StringIO()
    cp.write(buf)
    return from_ini(buf.getvalue())


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    flags = list(args.set)
    if args.algorithm:
        flags.append(f"run.algorithm={args.algorithm}")
    if args.master_seed is not None:
        flags.append(f"run.master_seed={args.master_seed}")
    if args.total_env_steps is not None:
        flags.append(f"run.total_env_steps={args.total_env_steps}")
    if args.run_dir:
        flags.append(f"run.run_dir={args.run_dir}")
    cfg = apply_overrides(cfg, flags)
    cfg.validate()
    return cfg


def _progress(stats) -> None:
    log.debug("env_steps=%d task_loss=%s distance=%s", stats.env_steps, stats.task_loss, stats.distance)


def cmd_train(args) -> int:
    if args.resume:
        run_dir = Path(args.run_dir or (load_config(args.config).run_dir if args.config else ""))
        if not (run_dir / "state.pkl").is_file():
            raise FileNotFoundError(f"nothing to resume in {run_dir}")
        trainer = Trainer.resume(run_dir)
        trainer.run(_progress, resume=True)
    else:
        cfg = config_from_args(args)
        trainer = Trainer(cfg, cfg.run_dir)
        trainer.run(_progress)
    print(f"finished {trainer.env_steps} env steps; metrics in {trainer.run_dir / 'metrics.csv'}")
    return EXIT_OK


# eval

EVAL_COLUMNS = ("level", "length", "performance_ratio", "side_effect", "task_reward", "possible_reward")


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    manifest, bank = read_bank(args.bank)
    shape = bank[0].fg.shape
    if shape != (params.arch.height, params.arch.width):
        raise ConfigError(
            f"checkpoint expects {params.arch.height}x{params.arch.width} boards, bank has {shape[0]}x{shape[1]}"
        )
    task = TaskKind(args.task or manifest["spec"]["task"])
    score = evaluate(params, bank, args.cap, task, T_stab=args.T_stab,
                     greedy=not args.sample, seed=args.seed)
    print(f"levels            {len(bank)}")
    print(f"mean_length       {score.mean_episode_length:.4f} +- {score.stderr_episode_length:.4f}")
    print(f"mean_perf_ratio   {score.mean_performance_ratio:.4f} +- {score.stderr_performance_ratio:.4f}")
    print(f"mean_side_effect  {score.mean_side_effect:.4f} +- {score.stderr_side_effect:.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(EVAL_COLUMNS)
            for entry, ep in zip(manifest["levels"], score.episodes):
                writer.writerow([entry["path"], ep.length, repr(ep.performance_ratio),
                                 repr(ep.side_effect), repr(ep.task_reward), repr(ep.possible_reward)])
    return EXIT_OK


# inspect

def transcript(level, task: TaskKind, act, max_steps: int) -> str:
    """One frame per step, at most ``max_steps``: action, reward, impact, then the board."""
    env = Env(level, task, max_steps)
    tracker = ImpactTracker(level)
    out = [f"start red={level.count(CellKind.RED)}", ""]
    while not env.done:
        action = Action(act(env.board))
        outcome = env.step(action)
        tracker.advance(env.board)
        out.append(
            f"t={env.t} action={action.name} reward={outcome.reward:+.2f} "
            f"impact={tracker.impact:g} red={env.board.count(CellKind.RED)}"
            + (" done" if outcome.done else "")
        )
        out.append(render(env.board))
        out.append("")
    return "\n".join(out)


def cmd_inspect(args) -> int:
    level = load_level(args.level, seed=args.seed)
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
        if level.fg.shape != (params.arch.height, params.arch.width):
            raise ConfigError("checkpoint and level sizes differ")
        act = policy_fn(params, greedy=True, rng=np.random.default_rng(args.seed))
    else:
        def act(board):
            return Action.NOOP
    text = transcript(level, TaskKind(args.task), act, args.max_steps)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "generate-levels": cmd_generate_levels,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError, LevelParseError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LevelGenerationError as exc:
        print(f"level generation failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
