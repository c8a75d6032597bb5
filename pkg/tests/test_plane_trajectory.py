"""Continuous plane trajectories built from camera plane detections."""

import math

import numpy as np
import pytest

from stcalib.errors import InsufficientDataError
from stcalib.lie_plane import Plane
from stcalib.plane_trajectory import PlaneDetection, build_trajectory


def static_detections(count=10, rate=10.0, n=(0.0, 0.6, 0.8), d=-2.0):
    return [PlaneDetection(i / rate, Plane(n, d)) for i in range(count)]


def wobbling_plane(t):
    """Smooth synthetic plane motion, normal tilting up to ~40 degrees."""
    v = np.array([0.4 * math.sin(1.3 * t), 0.3 * math.cos(0.7 * t + 0.2), 1.0])
    return Plane(v / np.linalg.norm(v), -3.0 + 0.5 * math.sin(0.9 * t))


def sampled(func, count, rate=10.0, t0=0.0):
    return [PlaneDetection(t0 + i / rate, func(t0 + i / rate)) for i in range(count)]


def angle_deg(a, b):
    return math.degrees(math.acos(min(1.0, abs(float(a @ b)))))


def test_static_plane_everywhere_in_coverage():
    traj = build_trajectory(static_detections())
    for t in np.linspace(0.1, 0.8, 29):
        pl = traj.query(t)
        np.testing.assert_allclose(pl.n, [0.0, 0.6, 0.8], atol=1e-12)
        assert pl.d == pytest.approx(-2.0, abs=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.05, 0.0999, 0.8001, 0.85, 0.9, -1.0, 10.0])
def test_query_outside_coverage_is_none(t):
    traj = build_trajectory(static_detections())
    assert traj.query(t) is None
    assert traj.query_time_derivative(t) is None


def test_coverage_edges_are_inclusive():
    traj = build_trajectory(static_detections())
    assert traj.query(0.1) is not None
    assert traj.query(0.8) is not None
    assert traj.valid_windows == [(0.1, pytest.approx(0.8))]


def test_dropped_frame_invalidates_windows_across_gap():
    times = [0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0]
    dets = [PlaneDetection(t, Plane((0.0, 0.0, 1.0), 1.0)) for t in times]
    traj = build_trajectory(dets)
    # the 0.2 s gap sits between indices 4 and 5; every window touching it is invalid
    assert list(traj.segment_valid) == [False, True, True, False, False, False, True, True, False]
    assert traj.query(0.5) is None
    assert traj.query(0.35) is None
    assert traj.query(0.25) is not None
    assert traj.query(0.75) is not None


def test_alternating_signs_give_identical_trajectory():
    dets = sampled(wobbling_plane, 30)
    flipped = [PlaneDetection(d.t, d.plane.flipped() if i % 2 else d.plane) for i, d in enumerate(dets)]
    a = build_trajectory(dets)
    b = build_trajectory(flipped)
    t = np.linspace(0.1, 2.7, 50)
    sa, sb = a.evaluate(t, derivative=True), b.evaluate(t, derivative=True)
    for x, y in zip(sa, sb):
        np.testing.assert_array_equal(x, y)


def test_first_normal_points_along_positive_z():
    dets = [PlaneDetection(d.t, d.plane.flipped()) for d in sampled(wobbling_plane, 10)]
    traj = build_trajectory(dets)
    assert traj.query(0.5).n[2] > 0.0


def test_interpolates_detections_at_their_timestamps():
    dets = sampled(wobbling_plane, 40)
    traj = build_trajectory(dets)
    for det in dets[1:-1]:
        pl = traj.query(det.t)
        np.testing.assert_allclose(pl.as_vector(), det.plane.as_vector(), atol=1e-12)


def test_smoothing_mode_reproduces_static_and_linear_data():
    dets = [PlaneDetection(i / 10, Plane((0.0, 0.0, 1.0), 1.0 + 0.3 * i / 10)) for i in range(10)]
    traj = build_trajectory(dets, interpolate=False)
    for t in np.linspace(0.1, 0.8, 15):
        pl = traj.query(t)
        np.testing.assert_allclose(pl.n, [0.0, 0.0, 1.0], atol=1e-15)
        assert pl.d == pytest.approx(1.0 + 0.3 * t, abs=1e-12)


def test_linear_offset_derivative():
    dets = [PlaneDetection(i / 10, Plane((0.0, 0.0, 1.0), 2.0 - 0.7 * i / 10)) for i in range(12)]
    for interpolate in (True, False):
        traj = build_trajectory(dets, interpolate=interpolate)
        for t in (0.1, 0.33, 0.9):
            np.testing.assert_allclose(traj.query_time_derivative(t), [0.0, 0.0, 0.0, -0.7], atol=1e-12)


def test_static_plane_has_zero_derivative():
    traj = build_trajectory(static_detections())
    for t in (0.1, 0.45, 0.8):
        np.testing.assert_allclose(traj.query_time_derivative(t), np.zeros(4), atol=1e-12)


def test_uniform_rotation_about_fixed_axis():
    omega = math.radians(30.0)   # 30 deg/s, 3 deg between frames at 10 Hz

    def rotating(t):
        return Plane((math.sin(omega * t), 0.0, math.cos(omega * t)), -2.0)

    dets = sampled(rotating, 20)
    for interpolate in (True, False):
        traj = build_trajectory(dets, interpolate=interpolate)
        for k in range(1, 17):
            t = (k + 0.5) / 10
            assert angle_deg(traj.query(t).n, rotating(t).n) < 0.5


@pytest.mark.parametrize("seed", range(5))
def test_time_derivative_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.5, 2.0, size=3)

    def plane(t):
        v = np.array([0.5 * math.sin(a * t), 0.5 * math.cos(b * t), 1.0])
        return Plane(v / np.linalg.norm(v), -2.0 + math.sin(c * t))

    traj = build_trajectory(sampled(plane, 50, rate=5.0))
    h = 1e-6
    for t in rng.uniform(0.3, 9.4, size=20):
        plus, minus = traj.query(t + h), traj.query(t - h)
        fd = (plus.as_vector() - minus.as_vector()) / (2 * h)
        analytic = traj.query_time_derivative(t)
        scale = max(np.abs(fd).max(), 1e-3)
        np.testing.assert_allclose(analytic, fd, atol=1e-5 * scale)


def test_batch_evaluation_matches_scalar_queries():
    traj = build_trajectory(sampled(wobbling_plane, 30))
    t = np.array([-1.0, 0.1, 0.55, 1.234, 2.8, 2.85])
    s = traj.evaluate(t, derivative=True)
    for i, ti in enumerate(t):
        pl = traj.query(ti)
        assert (pl is not None) == bool(s.valid[i])
        if pl is not None:
            # batched einsum may round differently in the last bit
            np.testing.assert_allclose(pl.as_vector(), np.append(s.n[i], s.d[i]), rtol=0, atol=1e-15)
            np.testing.assert_allclose(traj.query_time_derivative(ti), np.append(s.n_dot[i], s.d_dot[i]),
                                       rtol=0, atol=1e-15)
        else:
            assert np.isnan(s.n[i]).all()


def test_wide_rotation_between_frames_marks_window_invalid():
    normals = [(0.0, 0.0, 1.0)] * 5 + [(1.0, 0.0, 0.0)] * 5   # 90 degree jump
    dets = [PlaneDetection(i / 10, Plane(n, 1.0)) for i, n in enumerate(normals)]
    traj = build_trajectory(dets, interpolate=False)
    assert traj.query(0.45) is None
    assert traj.query(0.15) is not None


def test_needs_four_detections():
    with pytest.raises(InsufficientDataError):
        build_trajectory(static_detections(count=3))


def test_rejects_unsorted_timestamps():
    dets = static_detections()
    dets[3], dets[4] = dets[4], dets[3]
    with pytest.raises(ValueError):
        build_trajectory(dets)
