"""``platoon-frl`` command line: train, evaluate and report.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from platoon_frl import config as cfgmod
from platoon_frl import kernels, rundir
from platoon_frl.config import ConfigError, ExperimentConfig
from platoon_frl.orchestrator import (
    aggregate_seeds,
    evaluate,
    load_checkpoints,
    moving_average,
    run_training,
    save_checkpoints,
)
from platoon_frl.tensorio import LoadError

logger = logging.getLogger("platoon_frl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RuntimeFailure(RuntimeError):
    pass


def _resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either a config file or --preset, not both")
    if args.config:
        try:
            cfg = cfgmod.load(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
    elif args.preset:
        cfg = cfgmod.preset(args.preset)
    else:
        raise ConfigError("a config file or --preset is required")
    if args.episodes is not None:
        cfg = cfg.with_overrides(episodes=args.episodes)
    return cfg


def _seeds(args, cfg: ExperimentConfig) -> list[int]:
    if args.seed:
        return list(args.seed)
    env = os.environ.get("PLATOON_FRL_SEED")
    if env:
        try:
            return [int(s) for s in env.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"PLATOON_FRL_SEED must hold integers, got {env!r}") from None
    return [cfg.train_seed]


def _out_root(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or os.environ.get("PLATOON_FRL_OUT") or Path("runs") / cfg.name)


def train_one(cfg: ExperimentConfig, out: Path, eval_seed: int, quiet: bool = True) -> dict:
    """Train, checkpoint, evaluate and write every artifact of one run."""
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.save(cfg, rundir.config_path(out))
    t0 = time.perf_counter()

    def progress(ep, log):
        if not quiet and (ep % 10 == 0 or ep == cfg.episodes):
            recent = log.system_rewards()[-10:].mean()
            print(f"[{cfg.name} seed {cfg.train_seed}] episode {ep}/{cfg.episodes} "
                  f"mean reward (last 10) {recent:.4g}", file=sys.stderr, flush=True)

    result = run_training(cfg, progress=progress)
    save_checkpoints(rundir.checkpoint_dir(out), result.agents, cfg)
    rundir.write_training_log(out, result.log)
    rundir.write_curve(out, result.log)
    report = evaluate(result.agents, cfg, eval_seed)
    rundir.write_eval(out, report)
    flagged = sorted({r["episode"] for r in result.log.records if r["diverged"]})
    meta = {
        "name": cfg.name,
        "train_seed": cfg.train_seed,
        "eval_seed": eval_seed,
        "kernel_backend": kernels.BACKEND,
        "wall_seconds": time.perf_counter() - t0,
        "episode_seconds": result.log.episode_seconds,
        "frl_updates": result.log.frl_updates,
        "predicted_frl_updates": cfg.frl_schedule().predicted_updates(cfg.episode.steps) if cfg.federated else 0,
        "events": {f"p{p}_v{v}": e for (p, v), e in sorted(result.log.events.items())},
        "diverged_episodes": len(flagged),
        "divergence_dominated": len(flagged) * 2 > cfg.episodes,
        "eval_system_reward": report.system_reward,
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")
    if meta["divergence_dominated"]:
        logger.warning("%s: the divergence guard tripped in %d of %d episodes", out, len(flagged), cfg.episodes)
    return meta


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    seeds = _seeds(args, cfg)
    root = _out_root(args, cfg)
    jobs = []
    for seed in seeds:
        out = root if len(seeds) == 1 else root / f"seed_{seed}"
        jobs.append((cfg.with_overrides(train_seed=seed), out))
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        metas = list(pool.map(lambda job: train_one(job[0], job[1], args.eval_seed, args.quiet), jobs))
    for (c, out), meta in zip(jobs, metas):
        print(f"{out}: eval system reward {meta['eval_system_reward']:.6g} (seed {c.train_seed})")
    return EXIT_OK


def evaluate_run(run: Path, eval_seed: int) -> float:
    run = Path(run)
    if not rundir.config_path(run).exists():
        raise RuntimeFailure(f"{run} is not a run directory (no config.yaml)")
    cfg = cfgmod.load(rundir.config_path(run))
    agents = load_checkpoints(rundir.checkpoint_dir(run), cfg)
    report = evaluate(agents, cfg, eval_seed)
    rundir.write_eval(run, report)
    return report.system_reward


def cmd_evaluate(args) -> int:
    runs = args.runs
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        rewards = list(pool.map(lambda r: evaluate_run(r, args.eval_seed), runs))
    for run, r in zip(runs, rewards):
        print(f"{run}: eval seed {args.eval_seed} system reward {r:.6g}")
    return EXIT_OK


def cmd_report(args) -> int:
    groups: dict[str, list[tuple[int, Path]]] = defaultdict(list)
    for run in map(Path, args.runs):
        if not rundir.config_path(run).exists():
            raise RuntimeFailure(f"{run} is not a run directory (no config.yaml)")
        cfg = cfgmod.load(rundir.config_path(run))
        groups[cfg.name].append((cfg.train_seed, run))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed_cols = sorted({s for runs in groups.values() for s, _ in runs})
    rows = []
    for method, runs in groups.items():
        runs.sort()
        values = {}
        for seed, run in runs:
            try:
                values[seed] = rundir.read_system_reward(run, args.eval_seed)
            except (OSError, ValueError) as exc:
                raise RuntimeFailure(f"no evaluation for seed {args.eval_seed} in {run}: {exc}") from None
            if args.per_step:
                values[seed] /= cfgmod.load(rundir.config_path(run)).episode.steps
        summary = aggregate_seeds([values[s] for s, _ in runs], ddof=args.ddof)
        rows.append([method] + [values.get(s, "") for s in seed_cols]
                    + [summary.mean, "" if summary.std is None else summary.std])

        curves = []
        for _, run in runs:
            try:
                curves.append(rundir.read_curve(run))
            except OSError:
                continue
        if curves:
            n = min(len(c) for c in curves)
            arr = np.array([c[:n] for c in curves])
            ma = np.array([moving_average(c, 40) for c in arr])
            spread = ma.std(axis=0, ddof=args.ddof) if len(arr) > max(args.ddof, 1) else None
            curve_rows = ([i + 1, float(arr[:, i].mean()), float(ma[:, i].mean()),
                           "" if spread is None else float(spread[i])] for i in range(n))
            rundir._write(out / f"curve_{method}.csv", ["episode", "mean_raw", "mean_ma40", "std_ma40"], curve_rows)
    header = ["method"] + [f"seed_{s}" for s in seed_cols] + ["mean", "std"]
    rundir._write(out / "table.csv", header, rows)
    for row in rows:
        std = row[-1]
        print(f"{row[0]}: mean {rundir.fmt(row[-2])}" + ("" if std == "" else f" std {rundir.fmt(std)}"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoon-frl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train agents, write checkpoints, logs and an evaluation")
    train.add_argument("config", nargs="?", help="YAML experiment config")
    train.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="start from a named preset")
    train.add_argument("--seed", type=int, nargs="+", help="training seed(s); one run directory per seed")
    train.add_argument("--episodes", type=int, help="override the number of training episodes")
    train.add_argument("--eval-seed", type=int, default=6)
    train.add_argument("--out", help="run directory (or parent directory when several seeds are given)")
    train.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel threads")
    train.add_argument("--quiet", action="store_true", help="no per-episode progress")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="re-evaluate trained run directories")
    ev.add_argument("runs", nargs="+")
    ev.add_argument("--eval-seed", type=int, default=6)
    ev.add_argument("--jobs", type=int, default=1)
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("report", help="aggregate run directories into table and curve CSVs")
    rep.add_argument("runs", nargs="+")
    rep.add_argument("--eval-seed", type=int, default=6)
    rep.add_argument("--out", default="report")
    rep.add_argument("--ddof", type=int, default=0, choices=(0, 1),
                     help="0: population standard deviation, 1: sample")
    rep.add_argument("--per-step", action="store_true", help="divide rewards by the episode length")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, LoadError, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
