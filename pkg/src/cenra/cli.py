"""Command-line entry point: ``cenra {train,baseline,transfer,eval,reward-map}``.

Exit status: 0 ok, 2 bad configuration or arguments, 3 numeric failure,
4 file I/O error, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .config import TrainConfig, dump_config, load_config
from .cra import CentralRewardAgent
from .envsuite import resolve_task
from .errors import CenraError, ConfigurationError, NumericError, UsageError
from .policy_agent import DqnAgent

log = logging.getLogger("cenra")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
RESOLVED = "resolved-config"


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cenra", description="Centralized reward agent training on key-door mazes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", type=Path, help="config file; omitted keys keep their defaults")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--out", type=Path, required=out_required, help="output directory (created if absent)")

    sp = sub.add_parser("train", help="multi-task training with a shared reward agent")
    common(sp)
    sp.add_argument("--parallel-rollouts", action="store_true", help="step tasks in threads (not bit-deterministic)")

    sp = sub.add_parser("baseline", help="plain DQN or one private reward agent per task")
    common(sp)
    sp.add_argument("--baseline", choices=("plain", "relara"), required=True)
    sp.add_argument("--parallel-rollouts", action="store_true")

    sp = sub.add_parser("transfer", help="train a fresh policy on a new maze with a trained reward agent")
    common(sp)
    sp.add_argument("--cra", type=Path, required=True, help="reward-agent checkpoint (read only)")
    sp.add_argument("--task", required=True, help="maze name in the suite or a layout file")
    sp.add_argument("--freeze", action="store_true", help="keep the reward agent fixed")

    sp = sub.add_parser("eval", help="greedy evaluation of the policy checkpoints in a run directory")
    common(sp, out_required=False)
    sp.add_argument("run_dir", type=Path)
    sp.add_argument("--episodes", type=int)

    sp = sub.add_parser("reward-map", help="per-cell knowledge rewards and agreement with shortest paths")
    common(sp, out_required=False)
    sp.add_argument("--cra", type=Path, required=True)
    sp.add_argument("--task", required=True)
    sp.add_argument("--has-key", type=_bool, default=False)
    return p


def _config(args, base_dir: Path | None = None) -> TrainConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif base_dir is not None and (base_dir / RESOLVED).exists():
        cfg = load_config(base_dir / RESOLVED)
    else:
        cfg = TrainConfig()
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if getattr(args, "parallel_rollouts", False):
        run["parallel_rollouts"] = True
    if getattr(args, "episodes", None) is not None:
        run["eval_episodes"] = args.episodes
    return cfg.replace(run=run) if run else cfg


def _prepare_out(out: Path, cfg: TrainConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED).write_text(dump_config(cfg))


def _write_eval(out: Path, result: harness.TrainResult, cfg: TrainConfig) -> harness.EvalResult:
    ev = harness.evaluate(result.agents, result.tasks, cfg.run.eval_episodes, cfg.run.seed)
    doc = {"tasks": [t.name for t in result.tasks], "episodes": cfg.run.eval_episodes, **ev.as_dict()}
    (out / "eval.json").write_text(json.dumps(doc, indent=1) + "\n")
    return ev


def _save_run(out: Path, result: harness.TrainResult) -> None:
    result.metrics.write_csv(out / "metrics.csv")
    for i, agent in enumerate(result.agents):
        agent.save(out / f"dqn_{i}.ckpt")
    if result.cra is not None:
        result.cra.save(out / "cra.ckpt")
    for i, ra in enumerate(result.reward_agents):
        ra.save(out / f"cra_{i}.ckpt")


def cmd_train(args) -> int:
    cfg = _config(args)
    _prepare_out(args.out, cfg)
    if args.command == "train":
        result = harness.train_multitask(cfg)
    else:
        result = harness.train_baseline(cfg, args.baseline)
    _save_run(args.out, result)
    ev = _write_eval(args.out, result, cfg)
    print(f"suite mean return {ev.suite_mean:.3f} over {len(result.tasks)} tasks; artifacts in {args.out}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _config(args)
    task = resolve_task(args.task, cfg.env.suite, cfg.env.max_steps)
    cra = CentralRewardAgent.load(args.cra, cfg.cra)
    _prepare_out(args.out, cfg)
    mode = "frozen" if args.freeze else "learning"
    result = harness.transfer(cra, task, mode, cfg)
    result.metrics.write_csv(args.out / "metrics.csv")
    result.agents[0].save(args.out / "dqn_0.ckpt")
    if mode == "learning":
        cra.save(args.out / "cra.ckpt")
    ev = _write_eval(args.out, result, cfg)
    print(f"{mode} transfer to {task.name}: mean return {ev.suite_mean:.3f}; artifacts in {args.out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = args.run_dir
    cfg = _config(args, run_dir)
    ckpts = sorted(run_dir.glob("dqn_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))
    if not ckpts:
        raise FileNotFoundError(f"no dqn_*.ckpt files in {run_dir}")
    agents = [DqnAgent.load(p) for p in ckpts]
    names = list(cfg.env.train_tasks)
    if len(agents) != len(names):
        # a transfer run holds a single policy for the held-out maze
        names = [cfg.env.heldout_task] if len(agents) == 1 else names
    if len(agents) != len(names):
        raise ConfigurationError(f"{len(agents)} checkpoints but {len(names)} tasks in the config")
    tasks = harness.load_tasks(cfg, names)
    ev = harness.evaluate(agents, tasks, cfg.run.eval_episodes, cfg.run.seed)
    out = args.out or run_dir
    out.mkdir(parents=True, exist_ok=True)
    doc = {"tasks": names, "episodes": cfg.run.eval_episodes, **ev.as_dict()}
    (out / "eval.json").write_text(json.dumps(doc, indent=1) + "\n")
    for name, m, s in zip(names, ev.per_task_mean, ev.per_task_sem):
        print(f"{name}: {m:.3f} +/- {s:.3f}")
    print(f"suite: {ev.suite_mean:.3f} +/- {ev.suite_sem:.3f}")
    return 0


def cmd_reward_map(args) -> int:
    cfg = _config(args)
    task = resolve_task(args.task, cfg.env.suite, cfg.env.max_steps)
    cra = CentralRewardAgent.load(args.cra, cfg.cra)
    m = harness.reward_map(cra, task, args.has_key)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"reward-map_{task.name}_{'key' if args.has_key else 'nokey'}.json"
    dest.write_text(m.to_json() + "\n")
    print(f"oracle agreement {100 * m.agreement:.1f}% over {m.evaluated} states -> {dest}")
    return 0


COMMANDS = {"train": cmd_train, "baseline": cmd_train, "transfer": cmd_transfer,
            "eval": cmd_eval, "reward-map": cmd_reward_map}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, UsageError) as exc:
        print(f"cenra: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"cenra: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"cenra: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CenraError as exc:
        print(f"cenra: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
