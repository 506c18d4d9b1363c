"""Quintic polynomial trajectories in a Frenet frame.

plan_quintic solves one quintic for s(t) and one for l(t) against the same
duration, then samples Cartesian states. Velocity, acceleration and jerk are
propagated analytically through the frame (curvature is piecewise constant
along a ReferenceLine, so kappa' = 0 inside segments):

    v = s_dot*(1-k*l)*e_t + l_dot*e_n
    a = [s_dd*(1-k*l) - 2*k*s_dot*l_dot]*e_t + [k*s_dot^2*(1-k*l) + l_dd]*e_n
    j = [A' - B*k*s_dot]*e_t + [B' + A*k*s_dot]*e_n

with A, B the tangential/normal accel components. The scalar speed/accel/jerk
fields are the vector magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SingularBoundary
from .frenet import FrenetPose
from .geometry import ReferenceLine, normalize_angle


class QuinticPolynomial:
    """x(t) with fixed position/velocity/acceleration at both ends."""

    def __init__(self, x0: float, v0: float, a0: float,
                 x1: float, v1: float, a1: float, T: float):
        if T <= 1e-3:
            raise SingularBoundary(f"duration {T} too small for a quintic")
        self.T = T
        c0, c1, c2 = x0, v0, 0.5 * a0
        m = np.array([
            [T ** 3, T ** 4, T ** 5],
            [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
            [6 * T, 12 * T ** 2, 20 * T ** 3],
        ])
        rhs = np.array([
            x1 - (c0 + c1 * T + c2 * T * T),
            v1 - (c1 + 2 * c2 * T),
            a1 - 2 * c2,
        ])
        c3, c4, c5 = np.linalg.solve(m, rhs)
        self.coeffs = np.array([c0, c1, c2, c3, c4, c5])

    def pos(self, t):
        c = self.coeffs
        return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))

    def vel(self, t):
        c = self.coeffs
        return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))

    def acc(self, t):
        c = self.coeffs
        return 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))

    def jerk(self, t):
        c = self.coeffs
        return 6 * c[3] + t * (24 * c[4] + t * 60 * c[5])


@dataclass
class Trajectory:
    """Uniformly sampled motion with exact polynomial backing."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    jerk: np.ndarray
    s: np.ndarray
    l: np.ndarray
    dt: float
    duration: float
    ref: ReferenceLine
    s_poly: QuinticPolynomial
    l_poly: QuinticPolynomial

    def __len__(self) -> int:
        return len(self.t)

    def state_at(self, t: float) -> FrenetPose:
        """Exact Frenet state at any time in [0, duration]."""
        t = min(max(t, 0.0), self.duration)
        s = float(self.s_poly.pos(t))
        s_dot = float(self.s_poly.vel(t))
        s_ddot = float(self.s_poly.acc(t))
        l = float(self.l_poly.pos(t))
        l_dot = float(self.l_poly.vel(t))
        l_ddot = float(self.l_poly.acc(t))
        if abs(s_dot) > 1e-6:
            l_prime = l_dot / s_dot
            l_pprime = (l_ddot - l_prime * s_ddot) / (s_dot * s_dot)
        else:
            l_prime = 0.0
            l_pprime = 0.0
        return FrenetPose(s, l, s_dot, l_prime, s_ddot, l_pprime)

    def index_at(self, t: float) -> int:
        return min(max(int(round(t / self.dt)), 0), len(self.t) - 1)


def plan_quintic(ref: ReferenceLine, start: FrenetPose, end: FrenetPose,
                 duration: float, dt: float) -> Trajectory:
    """Quintic pair connecting two Frenet states over the given duration.

    FrenetPose lateral derivatives are spatial (dl/ds); they are converted to
    temporal ones against the longitudinal state at each boundary. duration
    must be at least 2*dt and an integer multiple of dt.
    """
    if duration <= 1e-3:
        raise SingularBoundary(f"duration {duration} too small")
    steps = duration / dt
    if steps < 2.0 - 1e-9:
        raise ValueError(f"duration {duration} must cover at least 2 samples of {dt}")
    n = int(round(steps))
    if abs(steps - n) > 1e-6:
        raise ValueError(f"duration {duration} is not a multiple of dt {dt}")

    def temporal(fp: FrenetPose) -> tuple[float, float]:
        l_dot = fp.l_prime * fp.s_dot
        l_ddot = fp.l_pprime * fp.s_dot ** 2 + fp.l_prime * fp.s_ddot
        return l_dot, l_ddot

    ld0, ldd0 = temporal(start)
    ld1, ldd1 = temporal(end)
    s_poly = QuinticPolynomial(start.s, start.s_dot, start.s_ddot,
                               end.s, end.s_dot, end.s_ddot, duration)
    l_poly = QuinticPolynomial(start.l, ld0, ldd0, end.l, ld1, ldd1, duration)
    t = np.arange(n + 1) * dt
    return _sample(ref, s_poly, l_poly, t, dt, duration)


def _sample(ref: ReferenceLine, s_poly: QuinticPolynomial,
            l_poly: QuinticPolynomial, t: np.ndarray, dt: float,
            duration: float) -> Trajectory:
    n = len(t)
    s = s_poly.pos(t)
    s_d = s_poly.vel(t)
    s_dd = s_poly.acc(t)
    s_ddd = s_poly.jerk(t)
    l = l_poly.pos(t)
    l_d = l_poly.vel(t)
    l_dd = l_poly.acc(t)
    l_ddd = l_poly.jerk(t)

    x = np.empty(n)
    y = np.empty(n)
    heading = np.empty(n)
    speed = np.empty(n)
    accel = np.empty(n)
    jerk = np.empty(n)
    prev_heading = None
    for i in range(n):
        px, py, theta, k = ref.pose_at(float(s[i]))
        one = 1.0 - k * l[i]
        nx, ny = -math.sin(theta), math.cos(theta)
        x[i] = px + l[i] * nx
        y[i] = py + l[i] * ny
        vt = s_d[i] * one
        vn = l_d[i]
        at = s_dd[i] * one - 2.0 * k * s_d[i] * l_d[i]
        an = k * s_d[i] ** 2 * one + l_dd[i]
        at_dot = s_ddd[i] * one - 3.0 * k * s_dd[i] * l_d[i] - 2.0 * k * s_d[i] * l_dd[i]
        an_dot = 2.0 * k * s_d[i] * s_dd[i] * one - k * k * s_d[i] ** 2 * l_d[i] + l_ddd[i]
        jt = at_dot - an * k * s_d[i]
        jn = an_dot + at * k * s_d[i]
        speed[i] = math.hypot(vt, vn)
        accel[i] = math.hypot(at, an)
        jerk[i] = math.hypot(jt, jn)
        if speed[i] > 1e-9:
            heading[i] = normalize_angle(theta + math.atan2(vn, vt))
        elif prev_heading is not None:
            heading[i] = prev_heading
        else:
            heading[i] = theta
        prev_heading = heading[i]
    return Trajectory(t=t, x=x, y=y, heading=heading, speed=speed, accel=accel,
                      jerk=jerk, s=s, l=l, dt=dt, duration=duration, ref=ref,
                      s_poly=s_poly, l_poly=l_poly)
