"""Synthetic calibration sessions with known ground truth.

A rectangular marker moves through a cuboid in front of the camera along a
cumulative cubic B-spline through randomly sampled key poses. The camera
observes its exact plane at a fixed frame rate. A spinning 16-line scanner,
rigidly mounted at a random offset from the camera, sweeps the moving marker
ray by ray, so every point is measured against the marker pose at its own
firing time.

Frames: the camera looks along +z (x right, y down). The scanner frame has
x forward, y left, z up, spinning clockwise seen from above; the sweep starts
pointing backwards so the seam lies behind the sensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .calibrator import Calibration
from .lie_plane import Plane, so3_exp, so3_log
from .plane_trajectory import PlaneDetection
from .point_timestamps import TimedPoints
from .spline import basis_batch, basis_dot_batch, lie_spline_batch

# Scanner axes expressed in the camera frame (columns): x -> +z, y -> -x, z -> -y.
MOUNT_ROTATION = np.array([
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0],
])


@dataclass(frozen=True)
class SimConfig:
    duration: float = 50.0
    n_keyposes: int = 11
    workspace: Tuple[float, float, float] = (8.0, 2.0, 4.0)
    workspace_center: Tuple[float, float, float] = (0.0, 0.0, 4.0)
    camera_rate: float = 10.0
    lidar_rate: float = 10.0
    sigma_lidar: float = 0.01
    true_delta_t: float = 0.0
    marker_size: Tuple[float, float] = (1.0, 0.8)
    max_tilt_deg: float = 90.0
    max_roll_deg: float = 45.0
    max_keypose_step_deg: float = 135.0
    lidar_lines: int = 16
    lidar_elevation_deg: float = 15.0
    lidar_azimuth_step_deg: float = 0.2
    lidar_min_range: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("duration", "camera_rate", "lidar_rate", "lidar_azimuth_step_deg"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_keyposes < 4:
            raise ValueError("n_keyposes must be at least 4")
        if self.sigma_lidar < 0:
            raise ValueError("sigma_lidar must be non-negative")


def random_rotation(rng, max_angle):
    """Rotation by an angle uniform in [0, max_angle] about a uniform random axis."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


def sample_extrinsics(rng) -> Calibration:
    """Random LiDAR-to-camera transform on top of the nominal scanner mounting."""
    t = rng.uniform([-1.0, -0.5, -0.25], [1.0, 0.5, 0.25])
    rot = random_rotation(rng, math.radians(45.0))
    return Calibration(rot @ MOUNT_ROTATION, t, 0.0)


def perturb_initial_guess(true_cal: Calibration, rng) -> Calibration:
    dt = rng.uniform(-0.1, 0.1, size=3)
    rot = random_rotation(rng, math.radians(22.5))
    return Calibration(rot @ true_cal.rotation, true_cal.translation + dt, 0.0)


class MarkerMotion:
    """Marker pose in the camera frame as a function of camera time.

    Rotation and translation are separate cumulative cubic B-splines over the
    key poses. The first and last key poses are repeated twice beyond the
    ends so the curve is defined on [-spacing, duration + spacing].
    """

    def __init__(self, times, rotations, positions, marker_size):
        self.key_times = np.asarray(times, dtype=float)
        self.key_rotations = np.asarray(rotations, dtype=float)
        self.key_positions = np.asarray(positions, dtype=float)
        self.marker_size = tuple(marker_size)
        spacing = self.key_times[1] - self.key_times[0]
        self.spacing = float(spacing)
        pad = [0, 0] + list(range(len(self.key_times))) + [-1, -1]
        self._times = np.concatenate([
            self.key_times[:1] - 2 * spacing, self.key_times[:1] - spacing,
            self.key_times,
            self.key_times[-1:] + spacing, self.key_times[-1:] + 2 * spacing])
        self._rots = self.key_rotations[pad]
        rel = np.swapaxes(self._rots[:-1], -1, -2) @ self._rots[1:]
        self._omegas = np.array([so3_log(m) for m in rel])
        self._pos = self.key_positions[pad]

    @property
    def time_range(self):
        return float(self._times[1]), float(self._times[-2])

    def pose(self, t, derivative=False):
        """Rotations (N, 3, 3) and positions (N, 3); with ``derivative`` also
        the body angular velocity and linear velocity."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = self.time_range
        if np.any(t < lo) or np.any(t > hi):
            raise ValueError(f"pose queried outside [{lo}, {hi}]")
        k = np.clip(np.searchsorted(self._times, t, side="right") - 1, 1, len(self._times) - 3)
        span = self._times[k + 1] - self._times[k]
        u = np.clip((t - self._times[k]) / span, 0.0, 1.0)
        b = basis_batch(u)
        omegas = self._omegas[k[:, None] + np.arange(-1, 2)]
        b_dot = None
        if derivative:
            b_dot = basis_dot_batch(u, span)
        rot, w = lie_spline_batch(self._rots[k - 1], omegas, b, b_dot)
        win = k[:, None] + np.arange(-1, 3)
        pts = self._pos[win]
        pos = pts[:, 0] + np.einsum("nik,ni->nk", np.diff(pts, axis=1), b[:, 1:])
        if not derivative:
            return rot, pos
        vel = np.einsum("nik,ni->nk", np.diff(pts, axis=1), b_dot[:, 1:])
        return rot, pos, w, vel

    def corners(self, t):
        """Marker corners (N, 4, 3) in the camera frame."""
        rot, pos = self.pose(t)
        w, h = self.marker_size
        local = np.array([[-w, -h, 0], [w, -h, 0], [w, h, 0], [-w, h, 0]]) / 2.0
        return pos[:, None, :] + np.einsum("nij,kj->nki", rot, local)

    def planes(self, t):
        """Marker planes in the camera frame: normals (N, 3), offsets (N,)."""
        rot, pos = self.pose(t)
        n = rot[:, :, 2]
        return n, -np.einsum("ni,ni->n", n, pos)


def _in_lidar_fov(pos, cfg: SimConfig, lidar: Calibration, margin_deg=3.0):
    p = lidar.rotation.T @ (pos - lidar.translation)
    elev = math.degrees(math.atan2(p[2], math.hypot(p[0], p[1])))
    return abs(elev) <= cfg.lidar_elevation_deg - margin_deg


def _sample_keypose(cfg: SimConfig, rng, prev_rot=None, lidar=None, max_attempts=2000):
    lo = np.asarray(cfg.workspace_center) - np.asarray(cfg.workspace) / 2
    hi = np.asarray(cfg.workspace_center) + np.asarray(cfg.workspace) / 2
    cos_max = math.cos(math.radians(cfg.max_tilt_deg))
    attempts = 0
    while True:
        attempts += 1
        pos = rng.uniform(lo, hi)
        if lidar is not None and attempts <= max_attempts and not _in_lidar_fov(pos, cfg, lidar):
            continue
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        if n[2] < 0:
            n = -n
        if n[2] < cos_max:
            continue
        # shortest rotation taking +z to n, then a roll about n
        axis = np.cross([0.0, 0.0, 1.0], n)
        s = np.linalg.norm(axis)
        tilt = so3_exp(axis / s * math.atan2(s, n[2])) if s > 1e-12 else np.eye(3)
        roll = so3_exp(n * rng.uniform(-1.0, 1.0) * math.radians(cfg.max_roll_deg))
        rot = roll @ tilt
        if prev_rot is not None:
            step = np.linalg.norm(so3_log(prev_rot.T @ rot))
            if step >= math.radians(cfg.max_keypose_step_deg):
                continue
        return rot, pos


def generate_marker_motion(cfg: SimConfig, rng, visible_from: Optional[Calibration] = None) -> MarkerMotion:
    """Key poses at uniform times over the session, joined by a B-spline.

    With ``visible_from`` set, key pose centres are resampled until they lie
    inside that scanner's vertical field of view, the way an operator keeps
    the board in view of both sensors.
    """
    times = np.linspace(0.0, cfg.duration, cfg.n_keyposes)
    rots, positions = [], []
    prev = None
    for _ in range(cfg.n_keyposes):
        rot, pos = _sample_keypose(cfg, rng, prev, visible_from)
        rots.append(rot)
        positions.append(pos)
        prev = rot
    return MarkerMotion(times, np.array(rots), np.array(positions), cfg.marker_size)


def simulate_camera_detections(motion: MarkerMotion, cfg: SimConfig) -> List[PlaneDetection]:
    count = int(round(cfg.duration * cfg.camera_rate)) + 1
    times = np.arange(count) / cfg.camera_rate
    n, d = motion.planes(times)
    return [PlaneDetection(float(t), Plane(ni, di)) for t, ni, di in zip(times, n, d)]


@dataclass
class LidarScan:
    """One simulated cloud in the scanner clock; ``azimuth`` is the sweep angle."""

    t_cloud: float
    xyz: np.ndarray
    azimuth: np.ndarray
    t: np.ndarray
    xyz_exact: np.ndarray


def _ray_directions(azimuth, elevation):
    psi = azimuth + math.pi
    ce = np.cos(elevation)
    return np.stack([np.cos(psi) * ce, -np.sin(psi) * ce, np.sin(elevation) * np.ones_like(psi)],
                    axis=-1)


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


_RAY_CHUNK = 50_000


def _intersect_rays(motion, truth, phi, elev, t_cam, cfg):
    """Range along each ray to the marker at its firing time; ``hit`` marks
    rays that land on the rectangle beyond the minimum range."""
    w, h = cfg.marker_size
    rot_t, trans_t = truth.rotation, truth.translation
    dirs = _ray_directions(phi, elev)
    m_rot, m_pos = motion.pose(t_cam)
    n_c = m_rot[:, :, 2]
    d_c = -np.einsum("ni,ni->n", n_c, m_pos)
    n_l = n_c @ rot_t
    d_l = d_c + n_c @ trans_t
    denom = np.einsum("ni,ni->n", n_l, dirs)
    with np.errstate(divide="ignore", invalid="ignore"):
        rng_exact = -d_l / denom
    hit = np.isfinite(rng_exact) & (rng_exact > cfg.lidar_min_range) & (np.abs(denom) > 1e-9)
    p_l = dirs * np.where(hit, rng_exact, 0.0)[:, None]
    p_c = p_l @ rot_t.T + trans_t
    local = np.einsum("nji,nj->ni", m_rot, p_c - m_pos)
    hit &= (np.abs(local[:, 0]) <= w / 2) & (np.abs(local[:, 1]) <= h / 2)
    return hit, rng_exact, dirs


def simulate_lidar_scans(motion: MarkerMotion, cfg: SimConfig, truth: Calibration, rng) -> List[LidarScan]:
    """Sweep the moving marker with the scanner; one entry per scan period."""
    f = cfg.lidar_rate
    period = 1.0 / f
    n_scans = int(round(cfg.duration * f))
    n_az = int(round(360.0 / cfg.lidar_azimuth_step_deg))
    az_grid = np.arange(n_az) * (2.0 * math.pi / n_az)
    elev = np.radians(np.linspace(-cfg.lidar_elevation_deg, cfg.lidar_elevation_deg, cfg.lidar_lines))
    elev_margin = np.radians(2.0 * cfg.lidar_elevation_deg / max(cfg.lidar_lines - 1, 1))
    rot_t, trans_t, dt_true = truth.rotation, truth.translation, cfg.true_delta_t
    lo, hi = motion.time_range

    # coarse visibility: marker corners at a few instants of each sweep
    n_probe = 5
    probe_lidar = (np.arange(n_scans)[:, None] + np.linspace(0.0, 1.0, n_probe)[None]) * period
    probe_cam = np.clip(probe_lidar + dt_true, lo, hi)
    corners_cam = motion.corners(probe_cam.ravel())
    corners_l = (corners_cam - trans_t) @ rot_t
    corners_l = corners_l.reshape(n_scans, n_probe * 4, 3)
    centre = corners_l.mean(axis=1)
    c_az = np.arctan2(-centre[:, 1], centre[:, 0]) - math.pi
    corner_az = np.arctan2(-corners_l[..., 1], corners_l[..., 0]) - math.pi
    rel_az = _wrap(corner_az - c_az[:, None])
    corner_el = np.arctan2(corners_l[..., 2], np.hypot(corners_l[..., 0], corners_l[..., 1]))
    dist = np.linalg.norm(corners_l, axis=-1).min(axis=1)
    az_margin = np.radians(1.0) + 0.05 / np.maximum(dist, 1e-3)

    scans = []
    cand_scan, cand_az, cand_el = [], [], []
    for k in range(n_scans):
        a0, a1 = rel_az[k].min() - az_margin[k], rel_az[k].max() + az_margin[k]
        rel = _wrap(az_grid - c_az[k])
        az_ok = (rel >= a0) & (rel <= a1)
        el_ok = (elev >= corner_el[k].min() - elev_margin) & (elev <= corner_el[k].max() + elev_margin)
        ai = np.flatnonzero(az_ok)
        ei = np.flatnonzero(el_ok)
        if len(ai) == 0 or len(ei) == 0:
            continue
        ga, ge = np.meshgrid(ai, ei, indexing="ij")
        cand_scan.append(np.full(ga.size, k))
        cand_az.append(ga.ravel())
        cand_el.append(ge.ravel())

    if cand_scan:
        ks = np.concatenate(cand_scan)
        ia = np.concatenate(cand_az)
        ie = np.concatenate(cand_el)
    else:
        ks = ia = ie = np.zeros(0, dtype=int)

    phi = az_grid[ia]
    t_lidar = ks * period + phi / (2.0 * math.pi * f)
    t_cam = t_lidar + dt_true
    inside_time = (t_cam >= lo) & (t_cam <= hi)
    ks, ia, ie, phi, t_lidar, t_cam = (a[inside_time] for a in (ks, ia, ie, phi, t_lidar, t_cam))

    chunks = [_intersect_rays(motion, truth, phi[sl], elev[ie[sl]], t_cam[sl], cfg)
              for sl in (slice(i, i + _RAY_CHUNK) for i in range(0, len(phi), _RAY_CHUNK))]
    if chunks:
        hit, rng_exact, dirs = (np.concatenate(parts) for parts in zip(*chunks))
    else:
        hit, rng_exact, dirs = np.zeros(0, dtype=bool), np.zeros(0), np.zeros((0, 3))
    p_l = dirs * np.where(hit, rng_exact, 0.0)[:, None]

    idx = np.flatnonzero(hit)
    noise = rng.normal(0.0, 1.0, size=len(idx)) * cfg.sigma_lidar
    xyz_exact = p_l[idx]
    xyz = dirs[idx] * (rng_exact[idx] + noise)[:, None]
    phi_h, t_h = phi[idx], t_lidar[idx]
    bounds = np.searchsorted(ks[idx], np.arange(n_scans + 1))
    for k in range(n_scans):
        sl = slice(bounds[k], bounds[k + 1])
        scans.append(LidarScan(k * period, xyz[sl], phi_h[sl], t_h[sl], xyz_exact[sl]))
    return scans


@dataclass
class SimulatedSession:
    config: SimConfig
    truth: Calibration
    motion: MarkerMotion
    detections: List[PlaneDetection]
    scans: List[LidarScan]

    @property
    def points(self) -> TimedPoints:
        return TimedPoints.concat(TimedPoints(s.xyz, s.t) for s in self.scans)

    @property
    def points_exact(self) -> TimedPoints:
        return TimedPoints.concat(TimedPoints(s.xyz_exact, s.t) for s in self.scans)


def simulate_lidar_points(motion: MarkerMotion, cfg: SimConfig, truth: Calibration, rng) -> TimedPoints:
    """All simulated LiDAR points of a session as one constraint set."""
    scans = simulate_lidar_scans(motion, cfg, truth, rng)
    return TimedPoints.concat(TimedPoints(s.xyz, s.t) for s in scans)


def simulate_session(cfg: SimConfig) -> SimulatedSession:
    """Full synthetic dataset; bit-identical for identical ``cfg`` (incl. seed)."""
    rng = np.random.default_rng(cfg.seed)
    truth = sample_extrinsics(rng)
    truth = replace(truth, delta_t=cfg.true_delta_t)
    motion = generate_marker_motion(cfg, rng, visible_from=truth)
    detections = simulate_camera_detections(motion, cfg)
    scans = simulate_lidar_scans(motion, cfg, truth, rng)
    return SimulatedSession(cfg, truth, motion, detections, scans)
