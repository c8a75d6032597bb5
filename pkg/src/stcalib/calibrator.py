"""Joint LiDAR-to-camera extrinsic and time offset estimation.

Each LiDAR point ``p_i`` stamped ``t_i`` (LiDAR clock) must lie on the
camera-observed marker plane at camera time ``t_i + delta_t``::

    r_i = n(t_i + dt) . (R p_i + t) + d(t_i + dt)

The Huber-robustified sum over points is minimized with Levenberg-Marquardt.
The pose is updated by left-multiplying ``exp(xi)`` for a 6-vector
``xi = (rho, phi)``; the time offset is a seventh, additive coordinate that
is frozen in spatial-only mode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import CoverageError, UnderConstrainedError
from .lie_plane import check_rotation, se3_exp
from .plane_trajectory import PlaneTrajectory
from .point_timestamps import TimedPoints

log = logging.getLogger(__name__)

MIN_ACTIVE_CONSTRAINTS = 20


@dataclass(frozen=True)
class Calibration:
    """``rotation``/``translation`` map LiDAR points into the camera frame;
    camera time = LiDAR time + ``delta_t`` (seconds)."""

    rotation: np.ndarray
    translation: np.ndarray
    delta_t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "delta_t", float(self.delta_t))

    @classmethod
    def identity(cls, delta_t=0.0):
        return cls(np.eye(3), np.zeros(3), delta_t)

    def transform(self, xyz):
        return np.asarray(xyz, dtype=float) @ self.rotation.T + self.translation

    def retract(self, step) -> "Calibration":
        """Apply a 7-vector (rho, phi, d_delta_t) update."""
        dr, dt = se3_exp(step[:6])
        return Calibration(dr @ self.rotation, dr @ self.translation + dt,
                           self.delta_t + float(step[6]))


@dataclass(frozen=True)
class SolverConfig:
    huber_delta: float = 0.05
    max_iterations: int = 100
    lambda_init: float = 1e-4
    convergence_tol: float = 1e-10
    estimate_time_offset: bool = True
    seed: int = 0
    lambda_factor: float = 10.0
    max_lambda: float = 1e12
    max_rejections: int = 10        # consecutive rejected steps before stopping


@dataclass
class SolverReport:
    calibration: Calibration
    iterations: int
    initial_cost: float
    final_cost: float
    active: int
    dropped: int
    converged: bool
    cost_trace: list = field(default_factory=list)
    message: str = ""


def residuals(traj: PlaneTrajectory, points: TimedPoints, cal: Calibration,
              jacobian: bool = False):
    """Point-to-plane residuals for all points.

    Returns ``(r, active)`` or ``(r, J, active)`` with ``J`` of shape (N, 7)
    ordered as (rho, phi, delta_t). Inactive rows (query outside the
    trajectory coverage) hold NaN.
    """
    s = traj.evaluate(points.t + cal.delta_t, derivative=jacobian)
    q = cal.transform(points.xyz)
    r = np.einsum("ni,ni->n", s.n, q) + s.d
    if not jacobian:
        return r, s.valid
    jac = np.empty((len(r), 7))
    jac[:, :3] = s.n
    jac[:, 3:6] = np.cross(q, s.n)
    jac[:, 6] = np.einsum("ni,ni->n", s.n_dot, q) + s.d_dot
    return r, jac, s.valid


def residual(traj: PlaneTrajectory, point, t: float, cal: Calibration) -> Optional[float]:
    """Signed distance of one LiDAR point from the plane at ``t + delta_t``, or None."""
    r, ok = residuals(traj, TimedPoints(np.asarray(point, float).reshape(1, 3),
                                        np.array([float(t)])), cal)
    return float(r[0]) if ok[0] else None


def residual_jacobian(traj: PlaneTrajectory, point, t: float, cal: Calibration) -> Optional[np.ndarray]:
    _, jac, ok = residuals(traj, TimedPoints(np.asarray(point, float).reshape(1, 3),
                                             np.array([float(t)])), cal, jacobian=True)
    return jac[0] if ok[0] else None


def huber_cost(r, delta):
    """Robust cost per residual: r^2 inside ``delta``, 2 delta |r| - delta^2 outside."""
    a = np.abs(r)
    return np.where(a <= delta, r * r, 2.0 * delta * a - delta * delta)


def _objective(r, active, delta):
    # out-of-coverage points are charged as if they sat on the Huber knee, so
    # the objective stays comparable when the active set changes
    return float(huber_cost(r[active], delta).sum() + delta * delta * np.count_nonzero(~active))


def subsample_constraints(points: TimedPoints, count: int, seed: int = 0) -> TimedPoints:
    """Uniform random subset of ``count`` points without replacement (order kept)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if count >= len(points):
        return points
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(points), size=count, replace=False))
    return points.take(idx)


def solve(traj: PlaneTrajectory, points: TimedPoints, initial: Calibration,
          cfg: SolverConfig = SolverConfig()) -> SolverReport:
    check_rotation(initial.rotation)
    if len(points) == 0:
        raise UnderConstrainedError("no constraints given")
    delta = cfg.huber_delta
    ndof = 7 if cfg.estimate_time_offset else 6

    cal = initial
    r, jac, active = residuals(traj, points, cal, jacobian=True)
    n_active = int(np.count_nonzero(active))
    if n_active == 0:
        raise CoverageError(
            f"all {len(points)} constraints fall outside the plane trajectory coverage")
    if n_active < MIN_ACTIVE_CONSTRAINTS:
        raise UnderConstrainedError(
            f"only {n_active} active constraints, need at least {MIN_ACTIVE_CONSTRAINTS}")

    cost = _objective(r, active, delta)
    initial_cost = cost
    trace = [cost]
    lam = cfg.lambda_init
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < cfg.max_iterations:
        it += 1
        ra, ja = r[active], jac[active, :ndof]
        w = np.where(np.abs(ra) <= delta, 1.0, delta / np.maximum(np.abs(ra), 1e-300))
        h = ja.T @ (w[:, None] * ja)
        g = ja.T @ (w * ra)
        diag = np.diag(h).copy()
        diag[diag <= 0.0] = 1.0

        accepted = False
        tries = 0
        while lam <= cfg.max_lambda and tries < cfg.max_rejections:
            tries += 1
            try:
                step = np.linalg.solve(h + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_factor
                continue
            full = np.zeros(7)
            full[:ndof] = step
            cand = cal.retract(full)
            r_c, act_c = residuals(traj, points, cand)
            cost_c = _objective(r_c, act_c, delta) if np.count_nonzero(act_c) else math.inf
            if cost_c < cost:
                accepted = True
                break
            lam *= cfg.lambda_factor

        if not accepted:
            converged = True
            message = "no further decrease possible"
            break

        rel = (cost - cost_c) / cost if cost > 0 else 0.0
        cal, cost = cand, cost_c
        trace.append(cost)
        lam = max(lam / cfg.lambda_factor, 1e-15)
        r, jac, active = residuals(traj, points, cal, jacobian=True)
        log.debug("iter %d cost %.6e lambda %.1e dt %.6f", it, cost, lam, cal.delta_t)
        if rel < cfg.convergence_tol or np.linalg.norm(step) < 1e-14:
            converged = True
            message = "relative cost decrease below tolerance"
            break
        if np.count_nonzero(active) < MIN_ACTIVE_CONSTRAINTS:
            raise UnderConstrainedError(
                f"active constraints fell to {np.count_nonzero(active)} during optimization")

    n_active = int(np.count_nonzero(active))
    return SolverReport(
        calibration=cal,
        iterations=it,
        initial_cost=initial_cost,
        final_cost=cost,
        active=n_active,
        dropped=len(points) - n_active,
        converged=converged,
        cost_trace=trace,
        message=message,
    )


def with_delta_t(cal: Calibration, delta_t: float) -> Calibration:
    return replace(cal, delta_t=float(delta_t))
