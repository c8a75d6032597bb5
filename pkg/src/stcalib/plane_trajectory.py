"""Continuous-time plane function built from discrete camera plane detections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import InsufficientDataError
from .lie_plane import (
    Plane,
    canonicalize_sequence,
    normals_from_minimal,
    normals_from_minimal_jacobian,
    plane_to_minimal,
    right_jacobian_inv_apply,
    so3_exp_batch,
    so3_log_batch,
)
from .spline import (
    DEFAULT_UNIFORMITY_TOL,
    basis_batch,
    basis_dot_batch,
    lie_increments,
    lie_spline_rotvec,
    quat_from_rotvec,
)


class PlaneDetection(NamedTuple):
    t: float
    plane: Plane


class PlaneSamples(NamedTuple):
    """Batch query result. Rows where ``valid`` is False hold NaN."""

    valid: np.ndarray
    n: np.ndarray
    d: np.ndarray
    n_dot: Optional[np.ndarray] = None
    d_dot: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class PlaneTrajectory:
    times: np.ndarray            # (M,)
    controls: np.ndarray         # (M, 3) rows of (omega_x, omega_y, d)
    nominal_dt: float
    segment_valid: np.ndarray    # (M-1,) span [t_k, t_k+1] is queryable
    _quats: np.ndarray           # (M, 4) control rotations
    _omegas: np.ndarray          # (M-1, 3) increments between controls

    @property
    def valid_windows(self) -> list[tuple[float, float]]:
        """Queryable intervals as (start, end) pairs, adjacent spans merged."""
        out: list[tuple[float, float]] = []
        for k in np.flatnonzero(self.segment_valid):
            a, b = float(self.times[k]), float(self.times[k + 1])
            if out and out[-1][1] == a:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
        return out

    def _locate(self, t):
        times = self.times
        k = np.searchsorted(times, t, side="right") - 1
        k = np.clip(k, 0, len(times) - 2)
        ok = self.segment_valid[k] & (t >= times[0]) & (t <= times[-1])
        # t exactly on the right end of a valid span belongs to that span (u = 1)
        prev = np.maximum(k - 1, 0)
        use_prev = ~ok & (k > 0) & (t == times[k]) & self.segment_valid[prev]
        k = np.where(use_prev, prev, k)
        ok = ok | use_prev
        return k, ok

    def evaluate(self, t, derivative: bool = False) -> PlaneSamples:
        """Vectorized query at the times ``t`` (any shape, flattened)."""
        t = np.atleast_1d(np.asarray(t, dtype=float)).ravel()
        k, ok = self._locate(t)
        n_out = np.full((len(t), 3), np.nan)
        d_out = np.full(len(t), np.nan)
        nd_out = np.full((len(t), 3), np.nan) if derivative else None
        dd_out = np.full(len(t), np.nan) if derivative else None
        idx = np.flatnonzero(ok)
        if len(idx):
            kk = k[idx]
            span = self.times[kk + 1] - self.times[kk]
            u = np.clip((t[idx] - self.times[kk]) / span, 0.0, 1.0)
            b = basis_batch(u)
            b_dot = basis_dot_batch(u, span) if derivative else None

            # window controls kk-1 .. kk+2, increments live at kk-1 .. kk+1
            win = kk[:, None] + np.arange(-1, 3)
            omegas = self._omegas[kk[:, None] + np.arange(-1, 2)]
            r, w_body = lie_spline_rotvec(self._quats[kk - 1], omegas, b, b_dot)
            n_out[idx] = normals_from_minimal(r[:, :2])

            dvals = self.controls[win, 2]
            dd = np.diff(dvals, axis=1)
            d_out[idx] = dvals[:, 0] + np.einsum("ni,ni->n", dd, b[:, 1:])
            if derivative:
                r_dot = right_jacobian_inv_apply(r, w_body)
                jac = normals_from_minimal_jacobian(r[:, :2])
                nd_out[idx] = np.einsum("nij,nj->ni", jac, r_dot[:, :2])
                dd_out[idx] = np.einsum("ni,ni->n", dd, b_dot[:, 1:])
        return PlaneSamples(ok, n_out, d_out, nd_out, dd_out)

    def query(self, t: float) -> Optional[Plane]:
        s = self.evaluate(t)
        if not s.valid[0]:
            return None
        return Plane(s.n[0], s.d[0])

    def query_time_derivative(self, t: float) -> Optional[np.ndarray]:
        """d(n, d)/dt at ``t`` as a 4-vector, or None outside coverage."""
        s = self.evaluate(t, derivative=True)
        if not s.valid[0]:
            return None
        return np.append(s.n_dot[0], s.d_dot[0])


def _prefilter(values):
    """Control points whose uniform cubic B-spline passes through ``values``.

    Interior knots satisfy (c[k-1] + 4 c[k] + c[k+1]) / 6 = s[k]; at both ends
    the second difference of the controls matches that of the data, so
    quadratic sequences are reproduced exactly.
    """
    s = np.asarray(values, dtype=float)
    m = len(s)
    if m < 3:
        return s.copy()
    ab = np.zeros((5, m))
    # banded storage: ab[2 + i - j, j] = A[i, j]
    ab[2, 1:m - 1] = 4.0 / 6.0
    ab[1, 2:m] = 1.0 / 6.0          # A[k, k+1]
    ab[3, 0:m - 2] = 1.0 / 6.0      # A[k, k-1]
    ab[1, 1], ab[2, 0], ab[0, 2] = 0.0, 1.0, 0.0
    # row 0: c0 - 2 c1 + c2
    ab[2, 0], ab[1, 1], ab[0, 2] = 1.0, -2.0, 1.0
    # row m-1: c[m-3] - 2 c[m-2] + c[m-1]
    ab[4, m - 3], ab[3, m - 2], ab[2, m - 1] = 1.0, -2.0, 1.0
    rhs = s.copy()
    rhs[0] = s[0] - 2.0 * s[1] + s[2]
    rhs[-1] = s[-3] - 2.0 * s[-2] + s[-1]
    return solve_banded((2, 2), ab, rhs)


def _knot_values_lie(ctrl):
    """Rotation-vector (x, y) of the Lie spline at interior knots 1..m-2."""
    full = np.column_stack([ctrl, np.zeros(len(ctrl))])
    rots, omegas = lie_increments(full)
    a1 = so3_exp_batch(omegas[:-1] * (5.0 / 6.0))
    a2 = so3_exp_batch(omegas[1:] * (1.0 / 6.0))
    return so3_log_batch(rots[:-2] @ a1 @ a2)[:, :2]


def _interpolating_controls(minimal, iterations=20, tol=1e-14):
    ctrl = minimal.copy()
    if len(ctrl) < 3:
        return ctrl
    ctrl[:, 2] = _prefilter(minimal[:, 2])
    target = minimal[:, :2]
    lie = np.column_stack([_prefilter(target[:, 0]), _prefilter(target[:, 1])])
    for _ in range(iterations):
        err = np.zeros_like(target)
        err[1:-1] = target[1:-1] - _knot_values_lie(lie)
        if np.max(np.abs(err)) < tol:
            break
        # boundary rows carry a zero second-difference correction
        err[0] = err[-1] = 0.0
        lie += np.column_stack([_prefilter(err[:, 0]), _prefilter(err[:, 1])])
    ctrl[:, :2] = lie
    return ctrl


def build_trajectory(
    detections: Sequence[PlaneDetection],
    uniformity_tol: float = DEFAULT_UNIFORMITY_TOL,
    max_separation: float = math.pi / 2,
    interpolate: bool = True,
) -> PlaneTrajectory:
    """Spline-ready plane trajectory from time-ordered detections.

    Signs are made consistent (first normal pointing along +z, then
    continuity), each plane is converted to its minimal form, and every
    4-detection window is checked for uniform spacing against the median
    frame interval.

    With ``interpolate`` (default) the control points are solved for so the
    spline reproduces each detection at its own timestamp; otherwise the
    detections are used as control points directly and the curve smooths
    them (error of order dt^2 times the plane acceleration).
    """
    if len(detections) < 4:
        raise InsufficientDataError(
            f"need at least 4 plane detections, got {len(detections)}")
    times = np.array([float(det.t) for det in detections])
    if not np.all(np.diff(times) > 0.0):
        raise ValueError("detection timestamps must be strictly increasing")
    planes = [det.plane for det in detections]
    if planes[0].n[2] < 0.0:
        planes[0] = planes[0].flipped()
    planes = canonicalize_sequence(planes)
    minimal = np.array([tuple(plane_to_minimal(pl)) for pl in planes])

    gaps = np.diff(times)
    nominal = float(np.median(gaps))
    gap_ok = np.abs(gaps - nominal) <= uniformity_tol * nominal * (1.0 + 1e-9)

    controls = minimal
    if interpolate:
        controls = minimal.copy()
        # solve per run of uniformly spaced detections
        breaks = np.flatnonzero(~gap_ok) + 1
        for run in np.split(np.arange(len(times)), breaks):
            controls[run] = _interpolating_controls(minimal[run])

    lie_ctrl = np.column_stack([controls[:, :2], np.zeros(len(times))])
    _, omegas = lie_increments(lie_ctrl)
    step_ok = np.linalg.norm(omegas, axis=-1) < max_separation

    m = len(times)
    seg = np.zeros(m - 1, dtype=bool)
    for k in range(1, m - 2):
        seg[k] = bool(gap_ok[k - 1:k + 2].all() and step_ok[k - 1:k + 2].all())
    return PlaneTrajectory(times, controls, nominal, seg, quat_from_rotvec(lie_ctrl), omegas)
