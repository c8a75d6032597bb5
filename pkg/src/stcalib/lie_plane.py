"""SO(3) maps and the minimal (omega_x, omega_y, d) plane parameterization.

Plane convention used throughout the package: a point ``x`` lies on the plane
``(n, d)`` iff ``n . x + d == 0``. ``(n, d)`` and ``(-n, -d)`` are the same
geometric plane.

The minimal form encodes the unit normal as the z axis rotated by the so(3)
element ``(omega_x, omega_y, 0)``; ``d`` is carried unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidRotationError, NormalizationError

# Below this angle sin(t)/t style ratios switch to their Taylor series.
SMALL_ANGLE = 1e-6
# Minimal-plane conversion flips the plane when |theta - pi| is below this.
PI_FLIP_EPS = 1e-6
# Normals off unit length by less than this are silently renormalized.
UNIT_NORMAL_TOL = 1e-6
ROTATION_TOL = 1e-6

_EZ = np.array([0.0, 0.0, 1.0])


def hat(v):
    """Skew-symmetric matrix of a 3-vector, or a stack of them for (N, 3) input."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _sinc(theta):
    """sin(t)/t, elementwise, series below SMALL_ANGLE."""
    theta = np.asarray(theta, dtype=float)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    return np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)


def _one_minus_cos_over_t2(theta):
    theta = np.asarray(theta, dtype=float)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    return np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                    (1.0 - np.cos(safe)) / (safe * safe))


def so3_exp_batch(omega):
    """Rodrigues formula for an (N, 3) array of rotation vectors -> (N, 3, 3)."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega, axis=-1)
    a = _sinc(theta)[..., None, None]
    b = _one_minus_cos_over_t2(theta)[..., None, None]
    k = hat(omega)
    return np.eye(3) + a * k + b * (k @ k)


def so3_exp(omega: Sequence[float]) -> np.ndarray:
    """Rotation matrix for the rotation vector ``omega`` (axis times angle, radians)."""
    omega = np.asarray(omega, dtype=float).reshape(3)
    return so3_exp_batch(omega[None])[0]


def so3_log_batch(rot):
    """Rotation vectors with norm in [0, pi] for an (N, 3, 3) stack of rotations.

    The angle comes from atan2 of the antisymmetric and symmetric parts, which
    stays well conditioned at both ends of the range. Within 1e-3 of pi the
    axis is read from the symmetric part instead of the vanishing
    antisymmetric one.
    """
    rot = np.asarray(rot, dtype=float)
    anti = 0.5 * vee(rot - np.swapaxes(rot, -1, -2))
    s = np.linalg.norm(anti, axis=-1)
    c = 0.5 * (np.trace(rot, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    out = anti / _sinc(theta)[..., None]

    near_pi = theta > math.pi - 1e-3
    if np.any(near_pi):
        r = rot[near_pi]
        th = theta[near_pi]
        cth = np.cos(th)
        sym = 0.5 * (r + np.swapaxes(r, -1, -2))
        kk = (sym - cth[:, None, None] * np.eye(3)) / (1.0 - cth)[:, None, None]
        diag = np.diagonal(kk, axis1=-2, axis2=-1)
        col = np.argmax(diag, axis=-1)
        idx = np.arange(len(col))
        axis = kk[idx, :, col] / np.sqrt(np.maximum(diag[idx, col], 1e-300))[:, None]
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        sign = np.where(np.einsum("ij,ij->i", axis, anti[near_pi]) < 0.0, -1.0, 1.0)
        out[near_pi] = axis * (sign * th)[:, None]
    return out


def check_rotation(rot, tol: float = ROTATION_TOL) -> np.ndarray:
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
        raise InvalidRotationError(f"expected a finite 3x3 matrix, got shape {rot.shape}")
    ortho = np.max(np.abs(rot @ rot.T - np.eye(3)))
    det = np.linalg.det(rot)
    if ortho > tol or abs(det - 1.0) > tol:
        raise InvalidRotationError(
            f"not a rotation: |R R^T - I| = {ortho:.3g}, det = {det:.12g}")
    return rot


def so3_log(rot) -> np.ndarray:
    """Rotation vector of ``rot`` with angle in [0, pi].

    Raises InvalidRotationError if ``rot`` is not orthonormal with unit
    determinant to within 1e-6.
    """
    rot = check_rotation(rot)
    return so3_log_batch(rot[None])[0]


def right_jacobian_inv_batch(phi):
    """Inverse right Jacobian of SO(3) at each row of ``phi`` (N, 3) -> (N, 3, 3).

    Maps a body-frame angular velocity to the time derivative of the rotation
    vector. Not valid near an angle of pi.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    coef = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    k = hat(phi)
    return np.eye(3) + 0.5 * k + coef[..., None, None] * (k @ k)


def right_jacobian_inv_apply(phi, v):
    """Row-wise ``J_r^-1(phi) v`` without forming matrices."""
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    coef = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    pv = np.cross(phi, v)
    return v + 0.5 * pv + coef[..., None] * np.cross(phi, pv)


def se3_exp(xi):
    """Exponential of a 6-vector (rho, phi) -> (R, t)."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    theta = float(np.linalg.norm(phi))
    k = hat(phi)
    if theta < SMALL_ANGLE:
        c = 1.0 / 6.0 - theta * theta / 120.0
    else:
        c = (theta - math.sin(theta)) / theta**3
    v = np.eye(3) + float(_one_minus_cos_over_t2(theta)) * k + c * (k @ k)
    return so3_exp(phi), v @ rho


@dataclass(frozen=True)
class Plane:
    """Plane ``n . x + d = 0`` with unit normal ``n``."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float).reshape(3))
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_vector(cls, v) -> "Plane":
        v = np.asarray(v, dtype=float).reshape(4)
        return cls(v[:3], v[3])

    def as_vector(self) -> np.ndarray:
        return np.append(self.n, self.d)

    def flipped(self) -> "Plane":
        return Plane(-self.n, -self.d)

    def distance(self, x) -> float:
        return float(self.n @ np.asarray(x, dtype=float) + self.d)


class MinimalPlane(NamedTuple):
    omega_x: float
    omega_y: float
    d: float


def _checked_unit(n) -> np.ndarray:
    n = np.asarray(n, dtype=float).reshape(3)
    norm = float(np.linalg.norm(n))
    if not math.isfinite(norm) or abs(norm - 1.0) > UNIT_NORMAL_TOL:
        raise NormalizationError(f"plane normal has norm {norm!r}, expected 1")
    return n / norm


def theta_over_sin(theta: float) -> float:
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
    return theta / math.sin(theta)


def plane_to_minimal(pl: Plane) -> MinimalPlane:
    n = _checked_unit(pl.n)
    d = pl.d
    # atan2 form equals acos(n_z) for unit n but keeps precision near 0 and pi
    theta = math.atan2(math.hypot(n[0], n[1]), n[2])
    if abs(theta - math.pi) < PI_FLIP_EPS:
        n, d = -n, -d
        theta = math.pi - theta
    f = theta_over_sin(theta)
    return MinimalPlane(-n[1] * f, n[0] * f, d)


def normals_from_minimal(omega_xy):
    """Unit normals exp([wx, wy, 0]) e_z for an (N, 2) array, closed form."""
    w = np.asarray(omega_xy, dtype=float)
    theta = np.hypot(w[..., 0], w[..., 1])
    s = _sinc(theta)
    return np.stack([w[..., 1] * s, -w[..., 0] * s, np.cos(theta)], axis=-1)


def normals_from_minimal_jacobian(omega_xy):
    """d n / d (wx, wy) for each row of an (N, 2) array -> (N, 3, 2)."""
    w = np.asarray(omega_xy, dtype=float)
    a, b = w[..., 0], w[..., 1]
    theta = np.hypot(a, b)
    s = _sinc(theta)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    t2 = theta * theta
    # s'(theta) / theta
    g = np.where(small, -1.0 / 3.0 + t2 / 30.0,
                 (safe * np.cos(safe) - np.sin(safe)) / safe**3)
    jac = np.empty(w.shape[:-1] + (3, 2))
    jac[..., 0, 0] = a * b * g
    jac[..., 1, 0] = -s - a * a * g
    jac[..., 2, 0] = -a * s
    jac[..., 0, 1] = s + b * b * g
    jac[..., 1, 1] = -a * b * g
    jac[..., 2, 1] = -b * s
    return jac


def minimal_to_plane(mp) -> Plane:
    mp = MinimalPlane(*mp)
    n = so3_exp((mp.omega_x, mp.omega_y, 0.0)) @ _EZ
    return Plane(n / np.linalg.norm(n), mp.d)


def canonicalize_sequence(planes: Sequence[Plane]) -> list[Plane]:
    """Flip signs so consecutive normals never point into opposite half-spaces."""
    if not planes:
        raise ValueError("canonicalize_sequence needs at least one plane")
    out = [planes[0]]
    for pl in planes[1:]:
        if float(pl.n @ out[-1].n) < 0.0:
            pl = pl.flipped()
        out.append(pl)
    return out
