"""Synthetic marker motion, camera detections and scanner sweeps."""

import math

import numpy as np
import pytest

from stcalib.calibrator import Calibration, residuals
from stcalib.lie_plane import hat, so3_exp, so3_log
from stcalib.plane_trajectory import build_trajectory
from stcalib.simulator import (
    MOUNT_ROTATION,
    MarkerMotion,
    SimConfig,
    perturb_initial_guess,
    sample_extrinsics,
    simulate_camera_detections,
    simulate_lidar_scans,
    simulate_session,
)
from stcalib.point_timestamps import TimedPoints


def static_motion(cfg, rot=None, pos=(0.0, 0.0, 4.0)):
    rot = so3_exp([0.3, -0.2, 0.1]) if rot is None else rot
    times = np.linspace(0.0, cfg.duration, 5)
    return MarkerMotion(times, [rot] * 5, [pos] * 5, cfg.marker_size)


def angle_deg(rot):
    return math.degrees(np.linalg.norm(so3_log(rot)))


def test_mount_rotation_is_proper():
    np.testing.assert_allclose(MOUNT_ROTATION @ MOUNT_ROTATION.T, np.eye(3))
    assert np.linalg.det(MOUNT_ROTATION) == pytest.approx(1.0)
    # scanner forward axis looks along the camera optical axis
    np.testing.assert_array_equal(MOUNT_ROTATION @ [1.0, 0.0, 0.0], [0.0, 0.0, 1.0])


def test_extrinsic_samples_within_bounds():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        cal = sample_extrinsics(rng)
        assert np.all(np.abs(cal.translation) <= [1.0, 0.5, 0.25])
        assert angle_deg(cal.rotation @ MOUNT_ROTATION.T) <= 45.0 + 1e-9


def test_extrinsic_samples_deterministic():
    a = sample_extrinsics(np.random.default_rng(7))
    b = sample_extrinsics(np.random.default_rng(7))
    np.testing.assert_array_equal(a.rotation, b.rotation)
    np.testing.assert_array_equal(a.translation, b.translation)


def test_initial_guess_perturbation_bounds():
    rng = np.random.default_rng(1)
    truth = Calibration(MOUNT_ROTATION, [0.1, 0.2, 0.3], 0.05)
    for _ in range(2000):
        init = perturb_initial_guess(truth, rng)
        assert np.all(np.abs(init.translation - truth.translation) <= 0.1)
        assert angle_deg(truth.rotation.T @ init.rotation) <= 22.5 + 1e-9
        assert init.delta_t == 0.0


def test_constant_keyposes_give_constant_pose():
    cfg = SimConfig()
    rot = so3_exp([0.1, 0.2, -0.3])
    motion = static_motion(cfg, rot, (0.5, -0.2, 3.0))
    rots, pos = motion.pose(motion.key_times)
    for r, p in zip(rots, pos):
        np.testing.assert_allclose(r, rot, atol=1e-14)
        np.testing.assert_allclose(p, [0.5, -0.2, 3.0], atol=1e-14)


def test_corners_form_rigid_rectangle():
    cfg = SimConfig()
    motion = simulate_session(cfg).motion
    w, h = cfg.marker_size
    corners = motion.corners(np.linspace(0.0, cfg.duration, 200))
    sides = np.linalg.norm(np.roll(corners, -1, axis=1) - corners, axis=-1)
    np.testing.assert_allclose(sides, np.tile([w, h, w, h], (200, 1)), atol=1e-12)
    diag = np.linalg.norm(corners[:, 2] - corners[:, 0], axis=-1)
    np.testing.assert_allclose(diag, math.hypot(w, h), atol=1e-12)


def test_pose_is_c1_across_knots():
    motion = simulate_session(SimConfig(seed=2)).motion
    h = 1e-7
    for tk in motion.key_times[1:-1]:
        _, p_mid = motion.pose([tk])
        _, p_lo = motion.pose([tk - h])
        _, p_hi = motion.pose([tk + h])
        v_left = (p_mid - p_lo) / h
        v_right = (p_hi - p_mid) / h
        np.testing.assert_allclose(v_left, v_right, atol=1e-6)
        _, _, w_l, v_l = motion.pose([tk - 1e-12], derivative=True)
        _, _, w_r, v_r = motion.pose([tk + 1e-12], derivative=True)
        np.testing.assert_allclose(v_l, v_r, atol=1e-9)
        np.testing.assert_allclose(w_l, w_r, atol=1e-9)


def test_pose_derivatives_match_finite_difference():
    motion = simulate_session(SimConfig(seed=1)).motion
    h = 1e-6
    t = np.array([1.3, 7.7, 22.2, 41.9])
    rot, _, w, v = motion.pose(t, derivative=True)
    r_plus, p_plus = motion.pose(t + h)
    r_minus, p_minus = motion.pose(t - h)
    np.testing.assert_allclose(v, (p_plus - p_minus) / (2 * h), atol=1e-6)
    body = np.swapaxes(rot, -1, -2) @ (r_plus - r_minus) / (2 * h)
    np.testing.assert_allclose(body, hat(w), atol=1e-6)


def test_pose_outside_range_raises():
    motion = static_motion(SimConfig())
    lo, hi = motion.time_range
    with pytest.raises(ValueError):
        motion.pose([hi + 1.0])


def test_detection_count_and_static_plane():
    cfg = SimConfig(duration=5.0, camera_rate=10.0)
    motion = static_motion(cfg)
    dets = simulate_camera_detections(motion, cfg)
    assert len(dets) == 51
    for det in dets:
        np.testing.assert_array_equal(det.plane.as_vector(), dets[0].plane.as_vector())


@pytest.mark.parametrize("duration, rate, expected", [(50.0, 10.0, 501), (50.0, 2.0, 101), (50.0, 30.0, 1501)])
def test_detection_count_arithmetic(duration, rate, expected):
    cfg = SimConfig(duration=duration, camera_rate=rate)
    assert len(simulate_camera_detections(static_motion(cfg), cfg)) == expected


def test_detections_match_pose_function():
    s = simulate_session(SimConfig(seed=4))
    times = np.array([d.t for d in s.detections])
    rot, pos = s.motion.pose(times)
    n = rot[:, :, 2]
    d = -np.einsum("ni,ni->n", n, pos)
    got_n = np.array([det.plane.n for det in s.detections])
    got_d = np.array([det.plane.d for det in s.detections])
    np.testing.assert_allclose(got_n, n, atol=1e-12)
    np.testing.assert_allclose(got_d, d, atol=1e-12)


def test_static_noiseless_scan_lies_on_plane():
    cfg = SimConfig(duration=5.0, sigma_lidar=0.0)
    truth = Calibration(MOUNT_ROTATION, [0.2, -0.1, 0.05], 0.0)
    motion = static_motion(cfg, rot=so3_exp([0.2, 0.1, 0.0]))
    scans = simulate_lidar_scans(motion, cfg, truth, np.random.default_rng(0))
    pts = TimedPoints.concat(TimedPoints(s.xyz, s.t) for s in scans)
    assert len(pts) > 1000
    traj = build_trajectory(simulate_camera_detections(motion, cfg))
    r, active = residuals(traj, pts, truth)
    assert active.sum() > 0.8 * len(pts)
    assert np.abs(r[active]).max() < 1e-9


def test_noisy_residual_spread():
    cfg = SimConfig(sigma_lidar=0.01, seed=5)
    s = simulate_session(cfg)
    traj = build_trajectory(s.detections)
    r, active = residuals(traj, s.points, s.truth)
    r = r[active]
    assert len(r) >= 10_000
    # range noise projects onto the normal with |cos(incidence)| <= 1
    assert 0.005 < np.std(r) <= 0.012
    # noise-free copies are off only by the spline's interpolation error
    exact, ok = residuals(traj, s.points_exact, s.truth)
    assert np.abs(exact[ok]).max() < 1e-5


def test_time_offset_shows_in_residuals():
    s = simulate_session(SimConfig(sigma_lidar=0.0, true_delta_t=0.04, seed=6))
    traj = build_trajectory(s.detections)
    r_true, ok_true = residuals(traj, s.points, s.truth)
    wrong = Calibration(s.truth.rotation, s.truth.translation, 0.0)
    r_wrong, ok_wrong = residuals(traj, s.points, wrong)
    rms_true = np.sqrt(np.mean(r_true[ok_true] ** 2))
    rms_wrong = np.sqrt(np.mean(r_wrong[ok_wrong] ** 2))
    assert rms_true < 1e-6
    assert rms_wrong > 1e-3


def test_session_shape_and_timing():
    s = simulate_session(SimConfig(seed=0))
    assert len(s.detections) == 501
    assert len(s.scans) == 500
    for k, scan in enumerate(s.scans[:50]):
        assert scan.t_cloud == pytest.approx(k * 0.1)
        if len(scan.t):
            assert np.all((scan.t >= scan.t_cloud) & (scan.t < scan.t_cloud + 0.1))
            np.testing.assert_allclose(scan.t, scan.t_cloud + scan.azimuth / (2 * math.pi * 10.0), atol=1e-12)
    assert len(s.points) > 20_000


def test_session_deterministic():
    a = simulate_session(SimConfig(seed=9))
    b = simulate_session(SimConfig(seed=9))
    np.testing.assert_array_equal(a.points.xyz, b.points.xyz)
    np.testing.assert_array_equal(a.points.t, b.points.t)
    np.testing.assert_array_equal(a.truth.rotation, b.truth.rotation)
    c = simulate_session(SimConfig(seed=10))
    assert not np.array_equal(a.truth.translation, c.truth.translation)


@pytest.mark.parametrize("kwargs", [
    {"duration": 0.0}, {"camera_rate": -1.0}, {"n_keyposes": 3}, {"sigma_lidar": -0.1},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)
