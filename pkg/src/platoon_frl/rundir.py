"""Run-directory layout and the CSV files written into it.

A run directory is self-describing::

    config.yaml                    fully resolved experiment config
    checkpoints/                   manifest.json + p<P>_v<V>/*.bin
    training_log.csv               one row per (episode, platoon, vehicle)
    curve.csv                      system reward per episode + 40-episode average
    eval/seed_<S>/trajectory.csv   one row per (step, platoon, vehicle)
    eval/seed_<S>/summary.csv      cumulative reward per vehicle + system row
    run_meta.json                  wall-clock timings and counters (not compared)

Floats in CSVs are written with six significant digits so reruns of the same
command produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

from platoon_frl.orchestrator import EvalReport, TrainingLog, moving_average

TRAINING_LOG_HEADER = ["episode", "platoon", "vehicle", "cumulative_reward", "frl_active", "diverged"]
CURVE_HEADER = ["episode", "system_reward", "system_reward_ma40"]
TRAJECTORY_HEADER = ["step", "time_s", "platoon", "vehicle", "e_p", "e_v", "a", "u", "jerk", "reward"]
SUMMARY_HEADER = ["platoon", "vehicle", "cumulative_reward"]


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".6g")


def _write(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def config_path(run: Path) -> Path:
    return Path(run) / "config.yaml"


def checkpoint_dir(run: Path) -> Path:
    return Path(run) / "checkpoints"


def eval_dir(run: Path, seed: int) -> Path:
    return Path(run) / "eval" / f"seed_{seed}"


def write_training_log(run: Path, log: TrainingLog) -> None:
    rows = ([r["episode"], r["platoon"], r["vehicle"], r["cumulative_reward"], r["frl_active"], r["diverged"]]
            for r in log.records)
    _write(Path(run) / "training_log.csv", TRAINING_LOG_HEADER, rows)


def write_curve(run: Path, log: TrainingLog, window: int = 40) -> None:
    raw = log.system_rewards()
    ma = moving_average(raw, window)
    _write(Path(run) / "curve.csv", CURVE_HEADER,
           ([i + 1, float(r), float(m)] for i, (r, m) in enumerate(zip(raw, ma))))


def write_eval(run: Path, report: EvalReport) -> Path:
    out = eval_dir(run, report.eval_seed)
    traj_rows = []
    members = sorted(report.trajectories)
    steps = report.trajectories[members[0]].shape[0]
    for k in range(steps):
        for p, v in members:
            e_p, e_v, a, u, jerk, r = report.trajectories[(p, v)][k]
            traj_rows.append([k + 1, (k + 1) * report.step_time, p, v, e_p, e_v, a, u, jerk, r])
    _write(out / "trajectory.csv", TRAJECTORY_HEADER, traj_rows)
    summary = [[str(p), str(v), report.rewards[(p, v)]] for p, v in members]
    summary.append(["all", "system", report.system_reward])
    _write(out / "summary.csv", SUMMARY_HEADER, summary)
    return out


def read_system_reward(run: Path, seed: int) -> float:
    for row in read_csv(eval_dir(run, seed) / "summary.csv"):
        if row["platoon"] == "all" and row["vehicle"] == "system":
            return float(row["cumulative_reward"])
    raise ValueError(f"no system row in {eval_dir(run, seed) / 'summary.csv'}")


def read_curve(run: Path) -> list[float]:
    return [float(row["system_reward"]) for row in read_csv(Path(run) / "curve.csv")]
