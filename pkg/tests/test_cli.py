import shutil
import subprocess
import sys

import pytest

from locnav.agent import CHECKPOINT_NAME
from locnav.cli import main


def run(*argv):
    try:
        return main(list(map(str, argv)))
    except SystemExit as exc:   # argparse usage errors
        return exc.code


def test_usage_errors_exit_2(tmp_path):
    assert run() == 2
    assert run("eval", "--policy", "dwa", "--scenario", "empty20") == 2           # no --seed
    assert run("eval", "--seed", 0, "--policy", "dwa", "--scenario", "nowhere") == 2
    assert run("eval", "--seed", 0, "--policy", "lndrl", "--scenario", "empty20") == 2
    assert run("eval", "--seed", 0, "--policy", "bogus", "--scenario", "empty20") == 2
    assert run("eval", "--seed", 0, "--policy", "dwa", "--scenario", "empty20", "--set", "ppo.nokey=1") == 2
    assert run("train", "--seed", 0, "--variant", "dwa", "--out", tmp_path) == 2
    assert run("train", "--seed", 0, "--config", "missing_cfg") == 2
    assert run("scenario", "validate", "--seed", 0, "nowhere") == 2
    assert run("viz", "trajectory", "--seed", 0, "--input", tmp_path / "x.csv", "--scenario",
               "empty20", "--out", tmp_path / "x.svg") == 2


def test_eval_and_trajectory_viz(tmp_path, capsys):
    out = tmp_path / "ev"
    assert run("eval", "--seed", 3, "--policy", "dwa", "--scenario", "empty20", "--episodes", 2,
               "--out", out, "--per-episode-logs") == 0
    lines = (out / "metrics.csv").read_text().strip().split("\n")
    assert len(lines) == 2 and lines[1].startswith("dwa,empty20,2,")
    assert "metrics written" in capsys.readouterr().out
    traj = out / "empty20_ep0000.csv"
    assert run("viz", "trajectory", "--seed", 0, "--input", traj, "--scenario", "empty20",
               "--out", tmp_path / "t.svg") == 0
    assert (tmp_path / "t.svg").read_text().startswith("<?xml")


def test_eval_multiple_scenarios_adds_pooled_row(tmp_path):
    out = tmp_path / "ev"
    assert run("eval", "--seed", 1, "--policy", "dwa", "--scenario", "empty20", "empty20",
               "--episodes", 1, "--out", out) == 0
    rows = (out / "metrics.csv").read_text().strip().split("\n")[1:]
    assert [r.split(",")[1] for r in rows] == ["empty20", "empty20", "pooled"]


def test_train_smoke_resume_and_activations(tmp_path):
    out = tmp_path / "run"
    small = ["--set", "ppo.horizon=4", "--set", "ppo.n_envs=1", "--set", "ppo.minibatch_size=4"]
    assert run("train", "--seed", 2, "--scenario", "room", "--variant", "drl_laser", "--out", out,
               "--steps", 8, *small) == 0
    assert (out / CHECKPOINT_NAME).is_file() and (out / "config.resolved.toml").is_file()
    assert run("train", "--seed", 2, "--out", out, "--steps", 12, "--resume") == 0
    scan = tmp_path / "scan.csv"
    scan.write_text(",".join(["3.0"] * 720))
    assert run("viz", "activations", "--seed", 0, "--checkpoint", out / CHECKPOINT_NAME,
               "--scan", scan, "--out", tmp_path / "a.ppm") == 0
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    assert run("eval", "--seed", 0, "--policy", "lndrl", "--checkpoint", out / CHECKPOINT_NAME,
               "--scenario", "empty20", "--episodes", 1, "--out", tmp_path / "e") == 2


def test_scenario_validate(capsys):
    for name in ("hybrid", "room", "corridor", "empty20"):
        assert run("scenario", "validate", "--seed", 0, name) == 0
    assert "ok" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("locnav") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["locnav", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "locnav" in r.stdout
    r = subprocess.run([sys.executable, "-m", "locnav.cli", "scenario", "validate", "sparse"],
                       capture_output=True, text=True)
    assert r.returncode == 2
