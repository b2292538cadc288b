import os

import numpy as np
import pytest

from vhjlab import cli
from vhjlab.runio import read_manifest


def test_usage_error_on_unknown_command(tmp_path):
    assert cli.main(["frobnicate", "--out", str(tmp_path)]) == cli.EXIT_USAGE


def test_usage_error_on_malformed_init(tmp_path):
    rc = cli.main(["solve", "--out", str(tmp_path), "--init", "bump"])
    assert rc == cli.EXIT_USAGE


def test_usage_error_names_missing_field(tmp_path, capsys):
    rc = cli.main(["solve", "--out", str(tmp_path), "--init", "bump:scale=1.0"])
    assert rc == cli.EXIT_USAGE
    assert "eps" in capsys.readouterr().err


def test_solve_writes_artifacts_and_classifies(tmp_path):
    out = tmp_path / "run"
    rc = cli.main([
        "solve", "--p", "3", "--init", "bump:eps=0.1,scale=2.0",
        "--out", str(out), "--grid-n", "2049", "--t-end", "0.004",
    ])
    assert rc == cli.EXIT_OK
    index = (out / "run_index.txt").read_text().splitlines()
    for rel in ("trajectory.csv", "transitions.csv", "intervals.csv", "manifest.txt"):
        assert rel in index
        assert (out / rel).exists()
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,trace,N,supgrad,saturation"
    intervals = (out / "intervals.csv").read_text().splitlines()[1:]
    labels = [line.split(",")[2] for line in intervals]
    assert "L" in labels
    # manifest materializes every tolerance
    man = read_manifest(str(out / "manifest.txt"))
    for key in ("time_tol", "space_tol", "richardson_tol", "dt_init", "dt_max"):
        assert key in man["solver"]


def test_solve_determinism(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli.main([
            "solve", "--p", "3", "--init", "bump:eps=0.12,scale=0.25",
            "--out", str(out), "--grid-n", "1025", "--t-end", "0.002", "--seed", "5",
        ])
        assert rc == cli.EXIT_OK
        outs.append((out / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]


def test_snapshot_schema(tmp_path):
    out = tmp_path / "run"
    cli.main([
        "solve", "--p", "3", "--init", "scaled_steady:a=1,scale=0.9",
        "--out", str(out), "--grid-n", "1025", "--t-end", "0.001",
    ])
    snaps = sorted((out / "snapshots").glob("*.csv"))
    assert snaps
    lines = snaps[0].read_text().splitlines()
    assert lines[0].startswith("# t = ")
    assert lines[1] == "x,u"
    x0 = [float(line.split(",")[0]) for line in lines[2:5]]
    assert x0[0] == 0.0 and x0 == sorted(x0)


def test_scenario_budget_guard(tmp_path, synthetic_calibration):
    from vhjlab.runio import write_calibration

    cal_path = tmp_path / "calibration.txt"
    write_calibration(synthetic_calibration, str(cal_path))
    out = tmp_path / "run"
    rc = cli.main([
        "scenario", "--sigma", "1", "--budget", "1", "--out", str(out),
        "--calibration", str(cal_path), "--grid-n", "2049",
    ])
    assert rc == cli.EXIT_MISMATCH
    assert (out / "run_index.txt").exists()


def test_csv_init_roundtrip(tmp_path):
    prof = tmp_path / "profile.csv"
    x = np.linspace(0, 1, 101)
    u = 0.2 * np.sin(np.pi * x)
    with open(prof, "w") as f:
        f.write("x,u\n")
        for xi, ui in zip(x, u):
            f.write(f"{xi},{ui}\n")
    out = tmp_path / "run"
    rc = cli.main([
        "solve", "--p", "3", "--init", f"csv:{prof}",
        "--out", str(out), "--grid-n", "1025", "--t-end", "0.001",
    ])
    assert rc == cli.EXIT_OK
