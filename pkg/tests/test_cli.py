import csv
import json
from pathlib import Path

import pytest

from platoon_frl import cli, config, rundir

TINY_YAML = """\
preset: {preset}
episodes: 2
episode:
  steps: 30
agent:
  batch_size: 8
  actor_hidden: [8, 6]
  critic_state_units: 5
  critic_action_units: 7
  critic_hidden: 6
"""


def write_config(tmp_path, preset="nofrl-2veh"):
    path = tmp_path / f"{preset}.yaml"
    path.write_text(TINY_YAML.format(preset=preset))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def csv_bytes(run: Path):
    return {p.relative_to(run): p.read_bytes() for p in sorted(run.rglob("*.csv"))}


def test_train_layout(tmp_path):
    run = tmp_path / "run"
    assert cli.main(["train", str(write_config(tmp_path)), "--seed", "1", "--out", str(run), "--quiet"]) == 0
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["manifest.json", "p1_v1", "p1_v2"]
    assert rows(run / "training_log.csv")[0] == rundir.TRAINING_LOG_HEADER
    assert len(rows(run / "training_log.csv")) == 1 + 2 * 2
    assert rows(run / "curve.csv")[0] == rundir.CURVE_HEADER
    traj = rows(run / "eval" / "seed_6" / "trajectory.csv")
    assert traj[0] == rundir.TRAJECTORY_HEADER
    assert sum(1 for r in traj[1:] if r[3] == "1") == 30
    summary = rows(run / "eval" / "seed_6" / "summary.csv")
    assert summary[0] == rundir.SUMMARY_HEADER
    vehicles = [float(r[2]) for r in summary[1:-1]]
    assert summary[-1][:2] == ["all", "system"]
    assert float(summary[-1][2]) == pytest.approx(sum(vehicles) / len(vehicles), rel=1e-5)
    resolved = config.load(run / "config.yaml")
    assert resolved.train_seed == 1 and resolved.episodes == 2


def test_six_significant_digits(tmp_path):
    run = tmp_path / "run"
    cli.main(["train", str(write_config(tmp_path)), "--out", str(run), "--quiet"])
    for r in rows(run / "curve.csv")[1:]:
        for cell in r[1:]:
            assert cell == format(float(cell), ".6g")


def test_full_length_evaluation_rows(tmp_path):
    cfg_path = tmp_path / "c.yaml"
    cfg_path.write_text(TINY_YAML.format(preset="nofrl-2veh").replace("steps: 30", "steps: 600").replace("episodes: 2", "episodes: 1"))
    run = tmp_path / "run"
    assert cli.main(["train", str(cfg_path), "--out", str(run), "--quiet"]) == 0
    traj = rows(run / "eval" / "seed_6" / "trajectory.csv")[1:]
    for v in ("1", "2"):
        assert sum(1 for r in traj if r[3] == v) == 600


def test_rerun_is_bit_identical(tmp_path):
    cfg = write_config(tmp_path, "intra-weights")
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["train", str(cfg), "--out", str(a), "--quiet"])
    cli.main(["train", str(cfg), "--out", str(b), "--quiet"])
    assert csv_bytes(a) == csv_bytes(b)
    cli.main(["evaluate", str(a), "--eval-seed", "11"])
    cli.main(["evaluate", str(b), "--eval-seed", "11"])
    assert csv_bytes(a) == csv_bytes(b)


def test_frl_update_count(tmp_path):
    run = tmp_path / "run"
    cli.main(["train", str(write_config(tmp_path, "intra-weights")), "--out", str(run), "--quiet"])
    meta = json.loads((run / "run_meta.json").read_text())
    assert meta["frl_updates"] == meta["predicted_frl_updates"] == 60


def test_multiple_seeds_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PLATOON_FRL_SEED", "3 4")
    monkeypatch.setenv("PLATOON_FRL_OUT", str(tmp_path / "envout"))
    assert cli.main(["train", str(write_config(tmp_path)), "--jobs", "2", "--quiet"]) == 0
    for s in (3, 4):
        assert config.load(tmp_path / "envout" / f"seed_{s}" / "config.yaml").train_seed == s


def test_evaluate_default_seed(tmp_path):
    run = tmp_path / "run"
    cli.main(["train", str(write_config(tmp_path)), "--out", str(run), "--quiet"])
    (run / "eval").rename(tmp_path / "old_eval")
    assert cli.main(["evaluate", str(run)]) == 0
    assert (run / "eval" / "seed_6" / "summary.csv").read_bytes() == \
        (tmp_path / "old_eval" / "seed_6" / "summary.csv").read_bytes()


def test_evaluate_missing_checkpoints(tmp_path, capsys):
    run = tmp_path / "run"
    cli.main(["train", str(write_config(tmp_path)), "--out", str(run), "--quiet"])
    (run / "checkpoints" / "p1_v2" / "actor.bin").unlink()
    assert cli.main(["evaluate", str(run)]) == 3
    assert cli.main(["evaluate", str(tmp_path / "nothing")]) == 3


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("episodes: 2\nagent:\n  batch_size: 8\n  colour: red\n")
    assert cli.main(["train", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "line 4" in capsys.readouterr().err
    assert cli.main(["train", "--out", str(tmp_path / "x")]) == 2


def fake_run(root: Path, name: str, seed: int, reward: float, curve=(-5.0, -4.0, -3.0)):
    run = root / f"{name}_{seed}"
    cfg = config.preset("nofrl-2veh").with_overrides(name=name, train_seed=seed)
    run.mkdir(parents=True)
    config.save(cfg, run / "config.yaml")
    rundir._write(run / "eval" / "seed_6" / "summary.csv", rundir.SUMMARY_HEADER,
                  [["1", "1", reward], ["1", "2", reward], ["all", "system", reward]])
    rundir._write(run / "curve.csv", rundir.CURVE_HEADER, ([i + 1, c, c] for i, c in enumerate(curve)))
    return run


def test_report_reproduces_published_row(tmp_path):
    runs = [fake_run(tmp_path, "nofrl", s, r) for s, r in zip((1, 2, 3, 4), (-3.73, -2.89, -4.69, -3.38))]
    out = tmp_path / "report"
    assert cli.main(["report", *map(str, runs), "--out", str(out)]) == 0
    table = rows(out / "table.csv")
    assert table[0] == ["method", "seed_1", "seed_2", "seed_3", "seed_4", "mean", "std"]
    assert round(float(table[1][5]), 2) == -3.67
    assert round(float(table[1][6]), 2) == 0.66
    curve = rows(out / "curve_nofrl.csv")
    assert curve[0] == ["episode", "mean_raw", "mean_ma40", "std_ma40"]


def test_report_single_run_and_constant_curve(tmp_path):
    run = fake_run(tmp_path, "solo", 1, -2.0, curve=(-1.5,) * 50)
    out = tmp_path / "report"
    assert cli.main(["report", str(run), "--out", str(out)]) == 0
    assert rows(out / "table.csv")[1][-1] == ""
    curve = rows(out / "curve_solo.csv")[1:]
    assert {r[2] for r in curve} == {"-1.5"}
    assert {r[3] for r in curve} == {""}


def test_report_missing_eval(tmp_path):
    run = fake_run(tmp_path, "x", 1, -2.0)
    assert cli.main(["report", str(run), "--eval-seed", "9", "--out", str(tmp_path / "r")]) == 3
