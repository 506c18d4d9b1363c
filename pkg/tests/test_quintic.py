import math
import random

import numpy as np
import pytest

from simrun.errors import SingularBoundary
from simrun.frenet import FrenetPose, frenet_to_cartesian
from simrun.geometry import ReferenceLine, Segment
from simrun.quintic import QuinticPolynomial, Trajectory, plan_quintic

from test_geometry import three_segment_line


def oracle_quintic_coeffs(x0, v0, a0, x1, v1, a1, T):
    """Full 6x6 boundary-condition solve, independent of the implementation."""
    m = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, T, T**2, T**3, T**4, T**5],
        [0, 1, 2*T, 3*T**2, 4*T**3, 5*T**4],
        [0, 0, 2, 6*T, 12*T**2, 20*T**3],
    ], dtype=float)
    return np.linalg.solve(m, np.array([x0, v0, a0, x1, v1, a1], dtype=float))


def test_coefficients_match_full_system_oracle():
    rng = random.Random(5)
    for _ in range(200):
        bc = [rng.uniform(-20, 20) for _ in range(6)]
        T = rng.uniform(0.5, 10.0)
        q = QuinticPolynomial(*bc, T)
        want = oracle_quintic_coeffs(*bc, T)
        scale = max(1.0, float(np.abs(want).max()))
        assert np.abs(q.coeffs - want).max() / scale < 1e-9


def test_boundary_conditions_met():
    rng = random.Random(6)
    for _ in range(200):
        x0, v0, a0 = rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(-2, 2)
        x1, v1, a1 = rng.uniform(-5, 5), rng.uniform(-3, 3), rng.uniform(-2, 2)
        T = rng.uniform(1.0, 8.0)
        q = QuinticPolynomial(x0, v0, a0, x1, v1, a1, T)
        assert abs(q.pos(0.0) - x0) < 1e-9
        assert abs(q.vel(0.0) - v0) < 1e-9
        assert abs(q.acc(0.0) - a0) < 1e-9
        assert abs(q.pos(T) - x1) < 1e-9
        assert abs(q.vel(T) - v1) < 1e-9
        assert abs(q.acc(T) - a1) < 1e-9


def test_singular_and_invalid_durations():
    with pytest.raises(SingularBoundary):
        QuinticPolynomial(0, 0, 0, 1, 0, 0, 0.0)
    rl = ReferenceLine([Segment(0, 0, 0, 200, 0)])
    with pytest.raises(SingularBoundary):
        plan_quintic(rl, FrenetPose(0, 0), FrenetPose(10, 0), 1e-4, 0.1)
    with pytest.raises(ValueError):
        plan_quintic(rl, FrenetPose(0, 0), FrenetPose(10, 0), 0.1, 0.1)


def straight_plan(duration=5.0, dt=0.1) -> Trajectory:
    rl = ReferenceLine([Segment(0, 0, 0, 400, 0)])
    start = FrenetPose(s=5.0, l=0.5, s_dot=10.0, l_prime=0.02, s_ddot=0.5)
    end = FrenetPose(s=72.0, l=-0.8, s_dot=14.0, l_prime=0.0, s_ddot=0.0)
    return plan_quintic(rl, start, end, duration, dt)


def test_trajectory_sampling_grid_and_boundaries():
    traj = straight_plan()
    assert len(traj) == 51
    assert np.allclose(np.diff(traj.t), 0.1)
    assert traj.s[0] == pytest.approx(5.0, abs=1e-9)
    assert traj.l[0] == pytest.approx(0.5, abs=1e-9)
    assert traj.s[-1] == pytest.approx(72.0, abs=1e-9)
    assert traj.l[-1] == pytest.approx(-0.8, abs=1e-9)
    assert traj.speed[-1] == pytest.approx(14.0, abs=1e-9)
    assert (traj.speed >= 0).all()


def _fd(values: np.ndarray, dt: float) -> np.ndarray:
    """Sixth-order central first derivative on the interior."""
    v = values
    return (-v[:-6] + 9 * v[1:-5] - 45 * v[2:-4] + 45 * v[4:-2]
            - 9 * v[5:-1] + v[6:]) / (60.0 * dt)


def test_derivative_fields_match_finite_differences():
    # Straight reference keeps curvature zero everywhere, so high-order
    # finite differences of the sampled positions must reproduce the analytic
    # accel and jerk fields.
    traj = straight_plan(duration=5.0, dt=0.05)
    dt = traj.dt
    vx = _fd(traj.x, dt)
    vy = _fd(traj.y, dt)
    ax = _fd(vx, dt)
    ay = _fd(vy, dt)
    jx = _fd(ax, dt)
    jy = _fd(ay, dt)
    speed_fd = np.hypot(vx, vy)
    accel_fd = np.hypot(ax, ay)
    jerk_fd = np.hypot(jx, jy)
    inner = slice(3, -3)
    rel = np.abs(speed_fd - traj.speed[inner]) / np.maximum(traj.speed[inner], 1.0)
    assert rel.max() < 1e-3
    inner2 = slice(6, -6)
    rel_a = np.abs(accel_fd - traj.accel[inner2]) / np.maximum(traj.accel[inner2], 1.0)
    assert rel_a.max() < 1e-3
    inner3 = slice(9, -9)
    rel_j = np.abs(jerk_fd - traj.jerk[inner3]) / np.maximum(traj.jerk[inner3], 1.0)
    assert rel_j.max() < 1e-3


def test_curved_frame_positions_match_frenet_mapping():
    rl = three_segment_line()
    start = FrenetPose(s=10.0, l=0.0, s_dot=8.0)
    end = FrenetPose(s=60.0, l=1.0, s_dot=10.0)
    traj = plan_quintic(rl, start, end, 6.0, 0.1)
    for i in range(0, len(traj), 7):
        cp = frenet_to_cartesian(rl, FrenetPose(float(traj.s[i]), float(traj.l[i])))
        assert math.hypot(cp.x - traj.x[i], cp.y - traj.y[i]) < 1e-9


def test_splice_continuity_via_exact_state():
    traj = straight_plan()
    cut = 2.0
    mid = traj.state_at(cut)
    rl = traj.ref
    tail = plan_quintic(rl, mid, FrenetPose(100.0, 0.0, 12.0), 4.0, 0.1)
    i = traj.index_at(cut)
    assert abs(traj.t[i] - cut) < 1e-9
    assert math.hypot(tail.x[0] - traj.x[i], tail.y[0] - traj.y[i]) < 1e-6
    assert abs(tail.speed[0] - traj.speed[i]) < 1e-6
    assert abs(tail.accel[0] - traj.accel[i]) < 1e-6


def test_curved_frame_derivatives_match_finite_differences_inside_segment():
    # Arc-only reference: curvature is constant so the chain rule holds
    # globally; check accel agreement against high-order differences.
    rl = ReferenceLine([Segment(0, 0, 0, 300.0, 1 / 80.0)])
    start = FrenetPose(s=10.0, l=0.3, s_dot=9.0, l_prime=0.01)
    end = FrenetPose(s=80.0, l=-0.5, s_dot=12.0)
    traj = plan_quintic(rl, start, end, 6.0, 0.05)
    vx = _fd(traj.x, traj.dt)
    ax = _fd(vx, traj.dt)
    ay = _fd(_fd(traj.y, traj.dt), traj.dt)
    accel_fd = np.hypot(ax, ay)
    inner = slice(6, -6)
    rel = np.abs(accel_fd - traj.accel[inner]) / np.maximum(traj.accel[inner], 1.0)
    assert rel.max() < 1e-3
