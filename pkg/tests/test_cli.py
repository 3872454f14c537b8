import math
import os
import re

import numpy as np
import pytest

from conftest import circle_log
from helpers import absolute_config, dead_end_config
from racebench.cli import main
from racebench.controllers import CONTROLLERS
from racebench.trajio import Trajectory, write_csv, write_tum


def stats_line(out, name):
    line = next(l for l in out.splitlines() if l.startswith(f"{name}:"))
    return {k: float(v) for k, v in re.findall(r"(\w+) (-?[\d.e+-]+)", line)}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    codes = {name: main(["run", "-c", name, "-o", str(out)])
             for name in ("gap_follower", "pure_pursuit", "lqr")}
    return out, codes


# -- run ----------------------------------------------------------------------

def test_run_pure_pursuit(runs, capsys):
    out, codes = runs
    assert codes["pure_pursuit"] == 0
    exp = out / "oval_pure_pursuit"
    assert sorted(os.listdir(exp)) == ["config.yaml", "error_map.csv", "lap_trend.csv",
                                       "laps.csv", "resources.txt", "summary.txt"]
    assert len((exp / "laps.csv").read_text().splitlines()) == 1 + 5


def test_run_unknown_controller(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(absolute_config("pure_pursuit", **{"name: pure_pursuit": "name: unknown"}))
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert all(name in err for name in CONTROLLERS)
    assert f"{cfg}:3:" in err


def test_run_dead_end(tmp_path, capsys):
    assert main(["run", "-c", dead_end_config(tmp_path), "-o", str(tmp_path / "out")]) == 2
    assert re.search(r"dead_end: (collision|stalled)", capsys.readouterr().out)
    summary = (tmp_path / "out" / "dead_end" / "summary.txt").read_text()
    assert "total_laps = 0" in summary


def test_run_missing_config(tmp_path, capsys):
    assert main(["run", "-c", str(tmp_path / "nope.yaml")]) == 1


def test_usage_errors():
    assert main([]) == 1
    assert main(["run"]) == 1
    assert main(["eval", "--est", "x"]) == 1


# -- eval ---------------------------------------------------------------------

def wiggly(n=300, scale=1.0):
    t = np.arange(n) * 0.05
    x, y = 4 * np.cos(0.3 * t) + 0.3 * np.sin(2.1 * t), 2 * np.sin(0.5 * t)
    yaw = np.arctan2(np.gradient(y), np.gradient(x))
    return Trajectory.from_planar(scale * x, scale * y, yaw, t)


def test_eval_self_is_zero(tmp_path, capsys):
    (tmp_path / "a.txt").write_text(write_tum(wiggly()))
    p = str(tmp_path / "a.txt")
    assert main(["eval", "--est", p, "--ref", p, "-o", str(tmp_path / "map.csv")]) == 0
    out = capsys.readouterr().out
    assert "APE: mean 0.000000" in out
    rows = (tmp_path / "map.csv").read_text().splitlines()
    assert rows[0] == "x,y,error" and len(rows) == 301


def test_eval_mixed_formats(tmp_path, capsys):
    (tmp_path / "est.txt").write_text(write_tum(wiggly()))
    (tmp_path / "ref.csv").write_text(write_csv(wiggly()))
    assert main(["eval", "--est", str(tmp_path / "est.txt"), "--ref", str(tmp_path / "ref.csv"),
                 "--est-format", "tum", "-o", ""]) == 0
    assert stats_line(capsys.readouterr().out, "APE")["max"] < 1e-6


def test_eval_scaled_copy(tmp_path, capsys):
    (tmp_path / "ref.txt").write_text(write_tum(wiggly()))
    (tmp_path / "est.txt").write_text(write_tum(wiggly(scale=1.05)))
    base = ["eval", "--est", str(tmp_path / "est.txt"), "--ref", str(tmp_path / "ref.txt"),
            "-o", ""]
    assert main(base + ["--align", "rigid"]) == 0
    rigid = stats_line(capsys.readouterr().out, "APE")
    assert main(base + ["--align", "similarity"]) == 0
    similar = stats_line(capsys.readouterr().out, "APE")
    assert rigid["mean"] > 0.01
    assert similar["mean"] < 1e-6


def test_eval_parse_error(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("0 1 2\n")
    (tmp_path / "ok.txt").write_text(write_tum(wiggly()))
    assert main(["eval", "--est", str(tmp_path / "bad.txt"),
                 "--ref", str(tmp_path / "ok.txt")]) == 1
    assert "line 1" in capsys.readouterr().err


# -- laps ---------------------------------------------------------------------

def circle_file(tmp_path, clockwise=False, loops=3.0, radius=5.0):
    margin = 0.1 / (2 * math.pi)
    phase0 = -math.pi / 2 + (0.1 if clockwise else -0.1)
    t, x, y, yaw, period = circle_log(radius=radius, loops=loops + 2 * margin, phase0=phase0,
                                      clockwise=clockwise)
    path = tmp_path / "log.txt"
    path.write_text(write_tum(Trajectory.from_planar(x, y, yaw, t)))
    return str(path), period


ZONE = "0,-6,0,-4"


def lap_times(out):
    return [float(m) for m in re.findall(r"^\s+\d+\s+([\d.]+)", out, re.M)]


def test_laps_circle(tmp_path, capsys):
    log, period = circle_file(tmp_path)
    assert main(["laps", "--log", log, "--zone", ZONE, "--min-lap-time", "3"]) == 0
    out = capsys.readouterr().out
    times = lap_times(out)
    assert len(times) == 3
    # printed with 3 decimals, so the 1 ms bound applies up to rounding
    assert all(abs(t - period) <= 1e-3 + 5e-4 for t in times)
    assert "laps 3" in out


def test_laps_never_crossing(tmp_path, capsys):
    log, _ = circle_file(tmp_path, radius=2.0)
    assert main(["laps", "--log", log, "--zone", ZONE]) == 2
    assert "0 laps" in capsys.readouterr().out


def test_laps_reverse(tmp_path, capsys):
    log, _ = circle_file(tmp_path, clockwise=True)
    assert main(["laps", "--log", log, "--zone", ZONE]) == 2
    assert lap_times(capsys.readouterr().out) == []


def test_laps_bad_zone_and_unstamped(tmp_path, capsys):
    log, _ = circle_file(tmp_path)
    assert main(["laps", "--log", log, "--zone", "0,0,0"]) == 1
    assert main(["laps", "--log", log, "--zone", "0,0,0,0"]) == 1
    (tmp_path / "u.csv").write_text("x,y\n0,0\n1,0\n")
    assert main(["laps", "--log", str(tmp_path / "u.csv"), "--zone", ZONE]) == 1


# -- compare ------------------------------------------------------------------

def test_compare_three(runs, tmp_path, capsys):
    out, _ = runs
    dirs = [str(out / f"oval_{n}") for n in ("gap_follower", "pure_pursuit", "lqr")]
    target = tmp_path / "comparison.csv"
    assert main(["compare", *dirs, "-o", str(target)]) == 0
    rows = target.read_text().splitlines()
    assert rows[0] == "metric,oval_gap_follower,oval_pure_pursuit,oval_lqr"
    assert len(rows) == 9
    ape = next(r for r in rows if r.startswith("ape_mean")).split(",")
    assert ape[1] == "--" and ape[2] != "--"


def test_compare_default_output(runs, capsys):
    out, _ = runs
    assert main(["compare", str(out / "oval_pure_pursuit"), str(out / "oval_lqr")]) == 0
    assert (out / "comparison.csv").exists()


def test_compare_errors(runs, tmp_path, capsys):
    out, _ = runs
    one = str(out / "oval_lqr")
    assert main(["compare", one]) == 1
    assert main(["compare", one, one]) == 1
    assert main(["compare", one, str(tmp_path / "missing")]) == 1
