"""Command-line entry point: ``stcalib {calibrate,simulate,sweep,timestamps}``.

Settings come from command-line flags, then an optional JSON config file
(``--config``), then built-in defaults, in that order of precedence.

Exit codes: 0 success, 2 usage error, 3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from importlib import metadata

import numpy as np

from .calibrator import Calibration, SolverConfig, solve, subsample_constraints
from .errors import CalibrationError, CoverageError, FormatError, UnderConstrainedError
from .evaluation import (DEFAULT_GRIDS, SWEEP_VARIABLES, SweepSpec, format_summary, run_sweep,
                         summarize, write_summary_csv)
from .fileio import (ResultFile, ScanRecord, load_detections, load_result, load_scans,
                     save_detections, save_result, save_scans)
from .lie_plane import so3_exp
from .plane_trajectory import build_trajectory
from .point_timestamps import RawScan, ScanModel, TimedPoints, assign_timestamps
from .simulator import SimConfig, perturb_initial_guess, simulate_session

log = logging.getLogger("stcalib")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


class UsageError(Exception):
    pass


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON config: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _settings(args, defaults: dict) -> dict:
    """Merge flags over config file over ``defaults``; flags default to None."""
    file_cfg = _load_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


# --------------------------------------------------------------------------
# calibrate

CALIBRATE_DEFAULTS = {
    "init": None,
    "init_translation": None,
    "init_rotvec": None,
    "init_delta_t": None,
    "spatial_only": False,
    "subsample": None,
    "seed": 0,
    "huber_delta": SolverConfig.huber_delta,
    "max_iterations": SolverConfig.max_iterations,
    "output": "result.txt",
}


def points_from_scans(records) -> TimedPoints:
    return TimedPoints.concat(assign_timestamps(rec.points, rec.model, rec.t_cloud)
                              for rec in records)


def _initial_guess(s) -> Calibration:
    if s["init"] is not None:
        init = load_result(s["init"]).calibration
    else:
        init = Calibration.identity()
    rot, trans, dt = init.rotation, init.translation, init.delta_t
    if s["init_rotvec"] is not None:
        rot = so3_exp(s["init_rotvec"])
    if s["init_translation"] is not None:
        trans = np.asarray(s["init_translation"], dtype=float)
    if s["init_delta_t"] is not None:
        dt = float(s["init_delta_t"])
    return Calibration(rot, trans, dt)


def cmd_calibrate(args) -> int:
    s = _settings(args, CALIBRATE_DEFAULTS)
    cfg = SolverConfig(huber_delta=float(s["huber_delta"]),
                       max_iterations=int(s["max_iterations"]),
                       estimate_time_offset=not s["spatial_only"],
                       seed=int(s["seed"]))
    detections = load_detections(args.detections)
    records = load_scans(args.scans)
    initial = _initial_guess(s)
    traj = build_trajectory(detections)
    points = points_from_scans(records)
    if s["subsample"] is not None:
        points = subsample_constraints(points, int(s["subsample"]), seed=int(s["seed"]))
    log.info("%d detections, %d clouds, %d constraints", len(detections), len(records), len(points))

    t0 = time.perf_counter()
    report = solve(traj, points, initial, cfg)
    runtime = time.perf_counter() - t0
    summary = {
        "iterations": report.iterations,
        "initial_cost": report.initial_cost,
        "final_cost": report.final_cost,
        "active": report.active,
        "dropped": report.dropped,
        "converged": report.converged,
        "message": report.message,
        "runtime_s": runtime,
    }
    config_echo = dict(dataclasses.asdict(cfg), subsample=s["subsample"],
                       detections=str(args.detections), scans=str(args.scans))
    save_result(s["output"], ResultFile(report.calibration, summary, config_echo, tool_version()))

    cal = report.calibration
    print(f"translation [m]: {' '.join(f'{v:.6f}' for v in cal.translation)}")
    print("rotation:")
    for row in cal.rotation:
        print("  " + " ".join(f"{v:+.8f}" for v in row))
    print(f"time offset: {1000.0 * cal.delta_t:.4f} ms")
    print(f"{report.iterations} iterations, cost {report.initial_cost:.6g} -> {report.final_cost:.6g}, "
          f"{report.active} active / {report.dropped} dropped constraints, {runtime:.2f} s")
    print(f"result written to {s['output']}")
    if not report.converged:
        print(f"error: solver did not converge: {report.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

SIM_FLAGS = ("seed", "sigma_lidar", "true_delta_t", "camera_rate", "lidar_rate", "duration")


def _sim_config(s) -> SimConfig:
    kwargs = {k: s[k] for k in SIM_FLAGS}
    kwargs["seed"] = int(kwargs["seed"])
    return SimConfig(**kwargs)


def _sim_defaults(extra: dict) -> dict:
    base = SimConfig()
    out = {k: getattr(base, k) for k in SIM_FLAGS}
    out.update(extra)
    return out


def scan_records_from_session(session) -> list:
    """Simulated clouds as VLP16-style records with a full-turn sweep range."""
    model = ScanModel.vlp16(session.config.lidar_rate, phi_s=0.0, phi_e=2.0 * math.pi)
    return [ScanRecord(scan.t_cloud, model, RawScan(scan.xyz, scan.azimuth))
            for scan in session.scans]


def cmd_simulate(args) -> int:
    s = _settings(args, _sim_defaults({}))
    cfg = _sim_config(s)
    out = args.output_dir
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_DATA
    session = simulate_session(cfg)
    # separate stream so the dataset itself does not depend on the perturbation
    initial = perturb_initial_guess(session.truth, np.random.default_rng([cfg.seed, 1]))
    sim_echo = dataclasses.asdict(cfg)
    version = tool_version()
    save_detections(os.path.join(out, "detections.txt"), session.detections)
    save_scans(os.path.join(out, "scans.txt"), scan_records_from_session(session))
    save_result(os.path.join(out, "ground_truth.txt"), ResultFile(session.truth, {}, sim_echo, version))
    save_result(os.path.join(out, "initial_guess.txt"), ResultFile(initial, {}, sim_echo, version))
    n_points = sum(len(scan.xyz) for scan in session.scans)
    print(f"{len(session.detections)} detections, {len(session.scans)} clouds, "
          f"{n_points} points written to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep

def cmd_sweep(args) -> int:
    s = _settings(args, _sim_defaults({"variable": None, "values": None, "trials": 20,
                                       "workers": 1}))
    if s["variable"] not in SWEEP_VARIABLES:
        raise UsageError(f"--variable must be one of {', '.join(SWEEP_VARIABLES)}")
    values = s["values"] if s["values"] is not None else DEFAULT_GRIDS[s["variable"]]
    base = _sim_config(s)
    spec = SweepSpec(s["variable"], tuple(float(v) for v in values), int(s["trials"]), base,
                     seed=int(s["seed"]), workers=int(s["workers"]))
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, f"sweep_{spec.variable}.csv")
    rows = run_sweep(spec, csv_path)
    summary = summarize(rows)
    write_summary_csv(summary, os.path.join(out, f"summary_{spec.variable}.csv"))
    print(format_summary(summary))
    print(f"{len(rows)} trials written to {csv_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# timestamps

def cmd_timestamps(args) -> int:
    records = load_scans(args.scans)
    out = []
    for rec in records:
        pts = assign_timestamps(rec.points, rec.model, rec.t_cloud)
        out.append(ScanRecord(rec.t_cloud, ScanModel.explicit(), RawScan(pts.xyz, t=pts.t)))
    save_scans(args.output, out)
    print(f"{sum(len(r.points.xyz) for r in out)} points in {len(out)} clouds written to {args.output}")
    return EXIT_OK


# --------------------------------------------------------------------------

def _add_sim_flags(p):
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--sigma-lidar", type=float, help="range noise std in meters (default 0.01)")
    p.add_argument("--true-delta-t", type=float, help="true time offset in seconds (default 0)")
    p.add_argument("--camera-rate", type=float, help="camera frame rate in Hz (default 10)")
    p.add_argument("--lidar-rate", type=float, help="scanner rotation rate in Hz (default 10)")
    p.add_argument("--duration", type=float, help="session length in seconds (default 50)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stcalib", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate extrinsics and time offset from files")
    p.add_argument("detections", help="camera plane detections file")
    p.add_argument("scans", help="LiDAR scan file")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("-o", "--output", help="result file (default result.txt)")
    p.add_argument("--init", help="result-format file holding the initial guess")
    p.add_argument("--init-translation", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--init-rotvec", type=float, nargs=3, metavar=("WX", "WY", "WZ"),
                   help="initial rotation as a rotation vector in radians")
    p.add_argument("--init-delta-t", type=float, help="initial time offset in seconds")
    p.add_argument("--spatial-only", action="store_true", default=None,
                   help="keep the time offset fixed at its initial value")
    p.add_argument("--subsample", type=int, metavar="N", help="use N random constraints")
    p.add_argument("--seed", type=int, help="subsampling seed (default 0)")
    p.add_argument("--huber-delta", type=float, help="Huber threshold in meters (default 0.05)")
    p.add_argument("--max-iterations", type=int)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    p.add_argument("output_dir")
    p.add_argument("--config", help="JSON file with default settings")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over one parameter")
    p.add_argument("output_dir")
    p.add_argument("--config", help="JSON file with default settings")
    p.add_argument("--variable", choices=SWEEP_VARIABLES)
    p.add_argument("--values", type=float, nargs="+", help="grid values (SI units)")
    p.add_argument("--trials", type=int, help="trials per value (default 20)")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("timestamps", help="assign per-point times and dump them")
    p.add_argument("scans", help="LiDAR scan file")
    p.add_argument("-o", "--output", required=True, help="scan file with explicit times")
    p.set_defaults(func=cmd_timestamps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stcalib: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UnderConstrainedError, CoverageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (FormatError, CalibrationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
