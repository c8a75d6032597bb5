"""Error metrics against ground truth and Monte-Carlo parameter sweeps."""

from __future__ import annotations

import csv
import functools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Sequence

import numpy as np

from .calibrator import Calibration, SolverConfig, solve, subsample_constraints
from .errors import CalibrationError
from .lie_plane import so3_log_batch
from .plane_trajectory import build_trajectory
from .simulator import SimConfig, perturb_initial_guess, simulate_session

log = logging.getLogger(__name__)

CSV_HEADER = ["sweep_var", "value", "trial", "metric_err_m", "rot_err_deg",
              "dt_err_s", "runtime_s", "converged"]

# Values are in SI units: meters, seconds, point counts, Hz.
DEFAULT_GRIDS = {
    "sigma_lidar": (0.005, 0.01, 0.02, 0.04),
    "init_offset": (-0.09, -0.045, 0.0, 0.045, 0.09),
    "true_offset_spatial_only": (0.0, 0.01, 0.02, 0.04, 0.08),
    "constraint_count": (100, 1000, 10000, 100000),
    "camera_rate": (2.0, 5.0, 10.0, 30.0),
}
SWEEP_VARIABLES = tuple(DEFAULT_GRIDS)


@dataclass(frozen=True)
class CalibError:
    metric_err: float   # meters
    rot_err: float      # degrees
    dt_err: float       # seconds


def compute_error(est: Calibration, gt: Calibration) -> CalibError:
    rel = gt.rotation.T @ est.rotation
    angle = float(np.linalg.norm(so3_log_batch(rel[None])[0]))
    return CalibError(
        float(np.linalg.norm(est.translation - gt.translation)),
        math.degrees(angle),
        abs(est.delta_t - gt.delta_t),
    )


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: Sequence[float]
    trials: int = 20
    base: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    workers: int = 1

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}; expected one of {SWEEP_VARIABLES}")
        if len(self.values) == 0:
            raise ValueError("sweep grid is empty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class SweepRow:
    sweep_var: str
    value: float
    trial: int
    metric_err_m: float
    rot_err_deg: float
    dt_err_s: float
    runtime_s: float
    converged: bool


def trial_seed(seed: int, trial: int) -> int:
    # shared across grid values so every value sees the same marker motion
    return seed * 1_000_003 + trial


@functools.lru_cache(maxsize=2)
def _cached_session(cfg: SimConfig):
    session = simulate_session(cfg)
    return session, build_trajectory(session.detections)


def run_trial(spec: SweepSpec, value: float, trial: int) -> SweepRow:
    """One simulate-and-solve trial of a sweep."""
    var = spec.variable
    cfg = replace(spec.base, seed=trial_seed(spec.seed, trial))
    solver = spec.solver
    if var == "sigma_lidar":
        cfg = replace(cfg, sigma_lidar=float(value))
    elif var == "camera_rate":
        cfg = replace(cfg, camera_rate=float(value))
    elif var == "true_offset_spatial_only":
        cfg = replace(cfg, true_delta_t=float(value))
        solver = replace(solver, estimate_time_offset=False)

    session, traj = _cached_session(cfg)
    rng = np.random.default_rng([spec.seed, trial, 7])
    initial = perturb_initial_guess(session.truth, rng)
    if var == "init_offset":
        initial = replace(initial, delta_t=session.truth.delta_t + float(value))
    points = session.points
    if var == "constraint_count":
        points = subsample_constraints(points, int(value), seed=trial_seed(spec.seed, trial))

    t0 = time.perf_counter()
    try:
        report = solve(traj, points, initial, solver)
    except CalibrationError as exc:
        log.warning("%s=%r trial %d failed: %s", var, value, trial, exc)
        return SweepRow(var, float(value), trial, math.nan, math.nan, math.nan,
                        time.perf_counter() - t0, False)
    runtime = time.perf_counter() - t0
    err = compute_error(report.calibration, session.truth)
    return SweepRow(var, float(value), trial, err.metric_err, err.rot_err, err.dt_err,
                    runtime, report.converged)


def _run_task(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def run_sweep(spec: SweepSpec, csv_path=None) -> List[SweepRow]:
    """All (value, trial) combinations, rows ordered by grid value then trial."""
    # trial-major execution lets one simulated session serve every grid value
    # when the sweep variable does not change the data
    tasks = [(spec, v, t) for t in range(spec.trials) for v in spec.values]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=len(spec.values)))
    else:
        rows = [_run_task(task) for task in tasks]
    order = {float(v): i for i, v in enumerate(spec.values)}
    rows.sort(key=lambda r: (order[r.value], r.trial))
    if csv_path is not None:
        write_csv(rows, csv_path)
    return rows


def write_csv(rows: Iterable[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.sweep_var, repr(r.value), r.trial, repr(r.metric_err_m),
                             repr(r.rot_err_deg), repr(r.dt_err_s), repr(r.runtime_s),
                             "true" if r.converged else "false"])


def read_csv(path) -> List[SweepRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected sweep CSV header {header}")
        return [SweepRow(row[0], float(row[1]), int(row[2]), float(row[3]), float(row[4]),
                         float(row[5]), float(row[6]), row[7] == "true") for row in reader]


METRICS = ("metric_err_m", "rot_err_deg", "dt_err_s", "runtime_s")


def summarize(rows: Sequence[SweepRow]) -> List[dict]:
    """Per grid value: count, converged count, and mean/median/std/sem per metric.

    Failed trials (NaN errors) are excluded from the statistics but counted.
    The standard deviation is the sample one (ddof=1), 0 for a single trial.
    """
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.sweep_var, r.value), []).append(r)
    out = []
    for (var, value), grp in groups.items():
        entry = {"sweep_var": var, "value": value, "n": len(grp),
                 "converged": sum(r.converged for r in grp)}
        for name in METRICS:
            x = np.array([getattr(r, name) for r in grp], dtype=float)
            x = x[np.isfinite(x)]
            k = len(x)
            std = float(np.std(x, ddof=1)) if k > 1 else 0.0
            entry[name] = {
                "mean": float(np.mean(x)) if k else math.nan,
                "median": float(np.median(x)) if k else math.nan,
                "std": std,
                "sem": std / math.sqrt(k) if k else math.nan,
            }
        out.append(entry)
    return out


def format_summary(summary: Sequence[dict]) -> str:
    lines = [f"{'variable':<26}{'value':>10}{'n':>4}{'conv':>5}"
             f"{'metric [cm]':>16}{'rotation [deg]':>18}{'offset [ms]':>16}{'time [s]':>10}"]
    for e in summary:
        m, r, d = e["metric_err_m"], e["rot_err_deg"], e["dt_err_s"]
        lines.append(
            f"{e['sweep_var']:<26}{e['value']:>10.4g}{e['n']:>4}{e['converged']:>5}"
            f"{100 * m['mean']:>9.3f}±{100 * m['std']:<6.3f}"
            f"{r['mean']:>11.4f}±{r['std']:<6.4f}"
            f"{1000 * d['mean']:>9.3f}±{1000 * d['std']:<6.3f}"
            f"{e['runtime_s']['mean']:>10.2f}")
    return "\n".join(lines)


def write_summary_csv(summary: Sequence[dict], path) -> None:
    header = ["sweep_var", "value", "n", "converged"] + [
        f"{m}_{stat}" for m in METRICS for stat in ("mean", "median", "std", "sem")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for e in summary:
            writer.writerow([e["sweep_var"], repr(e["value"]), e["n"], e["converged"]] + [
                repr(e[m][stat]) for m in METRICS for stat in ("mean", "median", "std", "sem")])
