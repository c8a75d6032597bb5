"""Command-line front end: simulate, calibrate, sweep and timestamps."""

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from stcalib.cli import EXIT_DATA, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, main, points_from_scans
from stcalib.fileio import load_detections, load_result, load_scans
from stcalib.lie_plane import so3_log


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:      # argparse reports usage errors this way
        return exc.code


@pytest.fixture(scope="module")
def noiseless_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim0")
    assert run("simulate", out, "--sigma-lidar", 0, "--true-delta-t", 0.02, "--seed", 3) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def short_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("short")
    assert run("simulate", out, "--duration", 10, "--seed", 1) == EXIT_OK
    return out


def test_simulate_default_layout(tmp_path):
    assert run("simulate", tmp_path) == EXIT_OK
    dets = load_detections(tmp_path / "detections.txt")
    scans = load_scans(tmp_path / "scans.txt")
    assert len(dets) == 501
    assert len(scans) == 500
    assert scans[0].model.kind == "vlp16"
    assert scans[0].model.phi_s == 0.0
    assert scans[0].model.phi_e == 2 * math.pi
    truth = load_result(tmp_path / "ground_truth.txt")
    assert truth.config["seed"] == 0
    assert (tmp_path / "initial_guess.txt").exists()


def test_simulate_same_seed_is_byte_identical(tmp_path, short_dir):
    assert run("simulate", tmp_path, "--duration", 10, "--seed", 1) == EXIT_OK
    for name in ("detections.txt", "scans.txt", "ground_truth.txt", "initial_guess.txt"):
        assert (tmp_path / name).read_bytes() == (short_dir / name).read_bytes()


def test_simulate_different_seed_differs(tmp_path, short_dir):
    assert run("simulate", tmp_path, "--duration", 10, "--seed", 2) == EXIT_OK
    assert (tmp_path / "scans.txt").read_bytes() != (short_dir / "scans.txt").read_bytes()


def test_calibrate_recovers_noiseless_ground_truth(noiseless_dir, tmp_path, capsys):
    out = tmp_path / "result.txt"
    code = run("calibrate", noiseless_dir / "detections.txt", noiseless_dir / "scans.txt",
               "--init", noiseless_dir / "initial_guess.txt", "-o", out)
    assert code == EXIT_OK
    assert "time offset: 20.0000 ms" in capsys.readouterr().out
    res = load_result(out)
    truth = load_result(noiseless_dir / "ground_truth.txt").calibration
    cal = res.calibration
    assert np.linalg.norm(cal.translation - truth.translation) < 1e-5
    assert math.degrees(np.linalg.norm(so3_log(truth.rotation.T @ cal.rotation))) < 1e-4
    assert abs(cal.delta_t - 0.02) < 1e-6
    assert res.report["converged"] is True
    assert res.report["runtime_s"] > 0
    assert res.version is not None


def test_calibrate_spatial_only_keeps_offset(short_dir, tmp_path):
    out = tmp_path / "r.txt"
    code = run("calibrate", short_dir / "detections.txt", short_dir / "scans.txt",
               "--init", short_dir / "initial_guess.txt", "--init-delta-t", 0.0125,
               "--spatial-only", "-o", out)
    assert code == EXIT_OK
    res = load_result(out)
    assert res.calibration.delta_t == 0.0125
    assert res.config["estimate_time_offset"] is False


def test_calibrate_subsample(short_dir, tmp_path):
    out = tmp_path / "r.txt"
    code = run("calibrate", short_dir / "detections.txt", short_dir / "scans.txt",
               "--init", short_dir / "initial_guess.txt", "--subsample", 2000, "--seed", 4, "-o", out)
    assert code == EXIT_OK
    res = load_result(out)
    assert res.report["active"] + res.report["dropped"] == 2000
    assert res.config["subsample"] == 2000


def test_config_precedence(short_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"huber_delta": 0.2, "max_iterations": 7, "subsample": 1500}))
    out = tmp_path / "r.txt"
    code = run("calibrate", short_dir / "detections.txt", short_dir / "scans.txt",
               "--init", short_dir / "initial_guess.txt", "--config", cfg,
               "--max-iterations", 30, "-o", out)
    assert code in (EXIT_OK, EXIT_SOLVER)
    res = load_result(out)
    assert res.config["huber_delta"] == 0.2        # from the file
    assert res.config["max_iterations"] == 30      # flag beats the file
    assert res.config["subsample"] == 1500
    assert res.config["seed"] == 0                 # built-in default


def test_unknown_config_key_is_usage_error(short_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"hubr_delta": 0.2}))
    assert run("calibrate", short_dir / "detections.txt", short_dir / "scans.txt",
               "--config", cfg) == EXIT_USAGE


def test_missing_arguments_is_usage_error():
    assert run("calibrate") == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE


def test_too_few_detections_is_data_error(short_dir, tmp_path):
    lines = (short_dir / "detections.txt").read_text().splitlines()
    bad = tmp_path / "d.txt"
    bad.write_text("\n".join(lines[:2] + [l for l in lines[2:] if not l.startswith("#")][:3]) + "\n")
    assert len(load_detections(bad)) == 3
    assert run("calibrate", bad, short_dir / "scans.txt", "-o", tmp_path / "r.txt") == EXIT_DATA


def test_malformed_scans_is_data_error(short_dir, tmp_path, capsys):
    bad = tmp_path / "s.txt"
    bad.write_text("stcalib-scans v1\ncloud t_cloud=0 model=hdl64 f=10 fields=x,y,z,azimuth\n")
    assert run("calibrate", short_dir / "detections.txt", bad, "-o", tmp_path / "r.txt") == EXIT_DATA
    assert "unknown scan model tag" in capsys.readouterr().err


def test_missing_file_is_data_error(short_dir, tmp_path):
    assert run("calibrate", tmp_path / "nope.txt", short_dir / "scans.txt") == EXIT_DATA


def test_too_few_constraints_is_solver_error(short_dir, tmp_path):
    code = run("calibrate", short_dir / "detections.txt", short_dir / "scans.txt",
               "--subsample", 10, "-o", tmp_path / "r.txt")
    assert code == EXIT_SOLVER


def test_timestamps_command(short_dir, tmp_path):
    out = tmp_path / "timed.txt"
    assert run("timestamps", short_dir / "scans.txt", "-o", out) == EXIT_OK
    recs = load_scans(out)
    assert all(r.model.kind == "explicit" for r in recs)
    expected = points_from_scans(load_scans(short_dir / "scans.txt"))
    got = points_from_scans(recs)
    np.testing.assert_array_equal(got.t, expected.t)
    np.testing.assert_array_equal(got.xyz, expected.xyz)


def test_sweep_command(tmp_path):
    code = run("sweep", tmp_path, "--variable", "sigma_lidar", "--values", 0.01, 0.02,
               "--trials", 1, "--duration", 15)
    assert code == EXIT_OK
    with open(tmp_path / "sweep_sigma_lidar.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["0.01", "0.02"]
    assert all(r["converged"] == "true" for r in rows)
    assert (tmp_path / "summary_sigma_lidar.csv").exists()


def test_sweep_rejects_unknown_variable(tmp_path):
    assert run("sweep", tmp_path, "--variable", "wind") == EXIT_USAGE
    assert run("sweep", tmp_path) == EXIT_USAGE


@pytest.mark.parametrize("command", ["calibrate", "simulate", "sweep", "timestamps"])
def test_help_for_every_command(command, capsys):
    assert run(command, "--help") == 0
    assert "usage:" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "stcalib", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "calibrate" in proc.stdout
