"""Uniform cumulative cubic B-splines for scalar and so(3) channels.

A window is four control points at t1 < t2 < t3 < t4; it may only be queried
on the central span [t2, t3], with ``u = (t - t2) / (t3 - t2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IllConditionedWindowError, OutOfWindowError
from .lie_plane import so3_exp_batch, so3_log_batch

# Cumulative basis matrix; B(u) = CUMULATIVE_MATRIX @ (1, u, u^2, u^3) / 6.
CUMULATIVE_MATRIX = np.array([
    [6.0, 0.0, 0.0, 0.0],
    [5.0, 3.0, -3.0, 1.0],
    [1.0, 3.0, 3.0, -2.0],
    [0.0, 0.0, 0.0, 1.0],
])

DEFAULT_UNIFORMITY_TOL = 0.25


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise DomainError(f"normalized time must lie in [0, 1], got {u!r}")
    return u


def basis_batch(u):
    """Cumulative basis for an array of u values -> (..., 4). No domain check."""
    u = np.asarray(u, dtype=float)
    powers = np.stack([np.ones_like(u), u, u * u, u * u * u], axis=-1)
    return powers @ CUMULATIVE_MATRIX.T / 6.0


def basis_dot_batch(u, dt_window):
    """d/dt of the cumulative basis; ``dt_window`` broadcasts against ``u``."""
    u = np.asarray(u, dtype=float)
    powers = np.stack([np.zeros_like(u), np.ones_like(u), 2.0 * u, 3.0 * u * u], axis=-1)
    return powers @ CUMULATIVE_MATRIX.T / (6.0 * np.asarray(dt_window, dtype=float)[..., None])


def cumulative_basis(u: float) -> np.ndarray:
    """(B0, B1, B2, B3) at normalized time ``u``; B0 is always 1."""
    return basis_batch(_check_u(u))


def cumulative_basis_dot(u: float, dt_window: float) -> np.ndarray:
    """Derivative of :func:`cumulative_basis` with respect to absolute time."""
    u = _check_u(u)
    if not dt_window > 0.0:
        raise DomainError(f"window span must be positive, got {dt_window!r}")
    return basis_dot_batch(u, dt_window)


@dataclass(frozen=True)
class SplineWindow:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(4)
        if not np.all(np.diff(times) > 0.0):
            raise DomainError(f"window timestamps must be strictly increasing: {times}")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def span(self) -> float:
        return float(self.times[2] - self.times[1])

    def normalized_time(self, t: float) -> float:
        t1, t2 = self.times[1], self.times[2]
        if not t1 <= t <= t2:
            raise OutOfWindowError(f"t = {t!r} outside the window span [{t1!r}, {t2!r}]")
        return (t - t1) / (t2 - t1)


def interp_scalar(w: SplineWindow, t: float) -> float:
    b = basis_batch(w.normalized_time(t))
    s = w.values.reshape(4)
    return float(s[0] * b[0] + np.diff(s) @ b[1:])


def interp_scalar_dot(w: SplineWindow, t: float) -> float:
    bd = basis_dot_batch(w.normalized_time(t), w.span)
    return float(np.diff(w.values.reshape(4)) @ bd[1:])


def lie_increments(controls):
    """Omega_i = log(exp(r_{i-1})^T exp(r_i)) along a sequence of rotation vectors.

    Returns (rotations (M, 3, 3), increments (M-1, 3)).
    """
    rots = so3_exp_batch(controls)
    rel = np.swapaxes(rots[:-1], -1, -2) @ rots[1:]
    return rots, so3_log_batch(rel)


def lie_spline_batch(r0_rot, omegas, b, b_dot=None):
    """Evaluate many Lie windows at once.

    ``r0_rot`` (N, 3, 3) is exp of the first control, ``omegas`` (N, 3, 3) the
    three increments, ``b`` (N, 4) the basis. Returns the interpolated rotation
    (N, 3, 3) and, when ``b_dot`` is given, the body angular velocity (N, 3)
    with dR/dt = R hat(w).
    """
    a = so3_exp_batch(omegas * b[:, 1:, None])
    rot = r0_rot @ a[:, 0] @ a[:, 1] @ a[:, 2]
    if b_dot is None:
        return rot, None
    w = omegas[:, 0] * b_dot[:, 1, None]
    for i in (1, 2):
        w = np.einsum("nji,nj->ni", a[:, i], w) + omegas[:, i] * b_dot[:, i + 1, None]
    return rot, w


def _qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw)


def _qexp(v, scale):
    """Quaternion of the rotation vector ``v * scale`` as a 4-tuple of arrays."""
    half = 0.5 * scale
    theta = np.sqrt(v[:, 0] ** 2 + v[:, 1] ** 2 + v[:, 2] ** 2)
    s = half * np.sinc(theta * half / np.pi)
    return (np.cos(theta * half), v[:, 0] * s, v[:, 1] * s, v[:, 2] * s)


def quat_from_rotvec(v):
    """(N, 3) rotation vectors -> (N, 4) unit quaternions (w, x, y, z)."""
    v = np.asarray(v, dtype=float)
    return np.stack(_qexp(v, 1.0), axis=-1)


def _conj_rotate(q, v):
    """R(q)^T v for quaternions ``q`` and vectors ``v``, both tuple-of-arrays."""
    w = q[0]
    ux, uy, uz = -q[1], -q[2], -q[3]
    vx, vy, vz = v
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return (vx + w * tx + uy * tz - uz * ty,
            vy + w * ty + uz * tx - ux * tz,
            vz + w * tz + ux * ty - uy * tx)


def lie_spline_rotvec(q0, omegas, b, b_dot=None):
    """Quaternion evaluation of many Lie windows; same maths as
    :func:`lie_spline_batch` but elementwise over arrays.

    ``q0`` (N, 4) is the first control as a quaternion. Returns the rotation
    vector of the interpolated rotation (N, 3) and, with ``b_dot``, the body
    angular velocity (N, 3).
    """
    q = tuple(q0[:, i] for i in range(4))
    parts = [_qexp(omegas[:, i], b[:, i + 1]) for i in range(3)]
    for a in parts:
        q = _qmul(q, a)
    qw, qx, qy, qz = q
    sign = np.where(qw < 0.0, -1.0, 1.0)
    qw, qx, qy, qz = qw * sign, qx * sign, qy * sign, qz * sign
    vn = np.sqrt(qx * qx + qy * qy + qz * qz)
    small = vn < 1e-8
    factor = np.where(small, 2.0 / qw, 2.0 * np.arctan2(vn, qw) / np.where(small, 1.0, vn))
    r = np.stack([qx * factor, qy * factor, qz * factor], axis=-1)
    if b_dot is None:
        return r, None
    w = tuple(omegas[:, 0, j] * b_dot[:, 1] for j in range(3))
    for i in (1, 2):
        w = _conj_rotate(parts[i], w)
        w = tuple(w[j] + omegas[:, i, j] * b_dot[:, i + 1] for j in range(3))
    return r, np.stack(w, axis=-1)


def _lie_controls(values):
    v = np.asarray(values, dtype=float)
    if v.shape == (4, 2):
        v = np.column_stack([v, np.zeros(4)])
    if v.shape != (4, 3):
        raise ValueError(f"expected 4 so(3) controls of size 2 or 3, got shape {v.shape}")
    return v


def interp_lie(w: SplineWindow, t: float, max_separation: float = math.pi / 2) -> np.ndarray:
    """Interpolated rotation vector (full 3-vector log) at time ``t``.

    Two-component controls are extended with a zero third component.
    """
    u = w.normalized_time(t)
    rots, omegas = lie_increments(_lie_controls(w.values))
    sep = np.linalg.norm(omegas, axis=-1)
    if np.any(sep >= max_separation):
        raise IllConditionedWindowError(
            f"consecutive control rotations {sep.max():.3f} rad apart (limit {max_separation:.3f})")
    b = basis_batch(np.array([u]))
    rot, _ = lie_spline_batch(rots[:1], omegas[None], b)
    return so3_log_batch(rot)[0]


def check_uniform(timestamps, nominal_dt: float, tolerance: float = DEFAULT_UNIFORMITY_TOL) -> bool:
    """True iff every consecutive spacing is within ``tolerance * nominal_dt`` of ``nominal_dt``."""
    gaps = np.diff(np.asarray(timestamps, dtype=float))
    return bool(np.all(np.abs(gaps - nominal_dt) <= tolerance * nominal_dt * (1.0 + 1e-9)))
