"""Command-line interface.

Every subcommand accepts ``--seed`` and writes its artifacts from this single
process, so identical inputs give byte-identical files. Exit codes: 0 success,
1 runtime failure (e.g. a training loss blew up), 2 usage or configuration
error, 3 the rollout diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from esfinetune import evo, nn
from esfinetune.harness import checkpoint, experiments, plots
from esfinetune.harness.config import ConfigError, default_document, dump_config, load_config
from esfinetune.rl import TrainingError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) if args.out else experiments.run_dir(cfg, args.seed)
    try:
        res = experiments.train(cfg, args.seed, out, episodes=args.episodes)
    except TrainingError as exc:
        print(f"training failed: {exc}; partial log kept in {out}", file=sys.stderr)
        return EXIT_FAIL
    summary = {"checkpoint": res["checkpoint"], "log": res["log"], "noise_sigma": res["noise"]["sigma"]}
    if cfg.system == "cartpole":
        summary["t_s"] = experiments.greedy_swing_up_time(cfg, res["result"].policy)
    sys.stdout.write(_dumps(summary))
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    res = experiments.finetune(cfg, args.checkpoint, args.seed, args.out, generations=args.generations)
    r = res["result"]
    summary = {
        "checkpoint": res["checkpoint"],
        "log": res["log"],
        "initial_fitness": r.initial_fitness,
        "best_fitness": r.best_fitness,
        "initial_metric": r.initial_metric,
        "best_metric": r.best_metric,
    }
    sys.stdout.write(_dumps(summary))
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = load_config(args.config)
    traj, summary = experiments.rollout_checkpoint(
        cfg, args.checkpoint, mode=args.mode, seed=args.seed, out_path=args.out, evaluation=not args.train_dt
    )
    if args.plot:
        plots.plot_trajectory(traj, args.plot, title=f"{cfg.system} ({args.mode})")
    sys.stdout.write(_dumps(summary))
    return EXIT_DIVERGED if traj.diverged else EXIT_OK


def cmd_score(args) -> int:
    cfg = load_config(args.config)
    seeds = args.seeds if args.seeds else [args.seed]
    report = experiments.score_checkpoint(cfg, args.checkpoint, seeds)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(_dumps(report))
    print(experiments.format_score_table(report))
    return EXIT_OK


def cmd_export_plot(args) -> int:
    res = plots.export(args.logs, args.labels, args.out_dir, metric=args.metric, name=args.name, title=args.title)
    print(f"wrote {res['csv']} and {res['png']} ({res['rows']} rows)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    records = nn.gradcheck(n_cases=args.cases, seed=args.seed, h=args.h)
    worst = max(r["max_rel_err"] for r in records)
    ok = worst < args.tol
    print(f"{len(records)} cases, worst relative error {worst:.3e} ({'ok' if ok else 'FAIL'} at tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_benchmark_snes(args) -> int:
    finals = []
    for k in range(args.runs):
        trace = evo.minimize_sphere(dim=args.dim, popsize=args.popsize, sigma0=args.sigma0,
                                    generations=args.generations, seed=args.seed + k)
        finals.append(trace[-1])
        print(f"seed {args.seed + k}: best fitness {trace[-1]:.3e}")
    median = float(np.median(finals))
    ok = median > -1e-6
    print(f"median best fitness {median:.3e} ({'ok' if ok else 'FAIL'} against -1e-6)")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_default_config(args) -> int:
    text = dump_config(default_document(args.system))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esfinetune", description="RL training plus evolutionary fine-tuning of control policies.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "train an actor-critic policy on the dense reward")
    p.add_argument("--config", required=True)
    p.add_argument("--episodes", type=int, default=None, help="override the configured episode count")
    p.add_argument("--out", default=None, help="output directory (default <output_dir>/seed<seed>)")

    p = add("finetune", cmd_finetune, "fine-tune a checkpoint with SNES on the true objective")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--generations", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (default: next to the checkpoint)")

    p = add("rollout", cmd_rollout, "roll out a checkpoint and write the trajectory CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("greedy", "noisy"), default="greedy")
    p.add_argument("--out", required=True, help="trajectory CSV path")
    p.add_argument("--plot", default=None, help="optional PNG of the state and input trajectories")
    p.add_argument("--train-dt", action="store_true", help="use the training control period instead of the evaluation one")

    p = add("score", cmd_score, "performance, robustness and final score of a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", type=int, nargs="+", default=None, help="evaluation seeds (default: --seed)")
    p.add_argument("--out", default=None, help="JSON report path")

    p = add("export-plot", cmd_export_plot, "aligned CSV series and a PNG figure from logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--labels", nargs="+", default=None)
    p.add_argument("--metric", default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--name", default="series")
    p.add_argument("--title", default=None)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the network gradients")
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = add("benchmark-snes", cmd_benchmark_snes, "SNES on the sphere function")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--popsize", type=int, default=40)
    p.add_argument("--sigma0", type=float, default=0.5)
    p.add_argument("--generations", type=int, default=300)

    p = add("default-config", cmd_default_config, "print the default config for a system")
    p.add_argument("system", choices=("cartpole", "acrobot", "pendubot"))
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, checkpoint.CheckpointError, experiments.CompatibilityError, plots.LogSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
