"""Cartesian/Frenet pose conversion against a ReferenceLine.

Frenet coordinates: s is arc length along the reference, l is signed lateral
offset (left positive). Derivatives are spatial: l_prime = dl/ds,
l_pprime = d2l/ds2; s_dot and s_ddot are temporal. Conversions are exact for
position, heading and speed; the scalar accel field uses the tangential
projection convention (the same formula both ways, so round trips are exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CurvatureSingularity, OutOfCorridor, ProjectionAmbiguous
from .geometry import ReferenceLine, normalize_angle

NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 20
AMBIGUITY_SEPARATION = 1.0  # m along s between equally close foot points


@dataclass(frozen=True)
class CartesianPose:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    accel: float = 0.0


@dataclass(frozen=True)
class FrenetPose:
    s: float
    l: float
    s_dot: float = 0.0
    l_prime: float = 0.0
    s_ddot: float = 0.0
    l_pprime: float = 0.0


def _refine_foot_point(ref: ReferenceLine, x: float, y: float, s0: float) -> float:
    """Newton iteration on g(s) = 0.5*|Q - P(s)|^2 from seed s0."""
    s = min(max(s0, 0.0), ref.length)
    for _ in range(NEWTON_MAX_ITER):
        px, py, theta, kappa = ref.pose_at(s)
        tx, ty = math.cos(theta), math.sin(theta)
        dx, dy = x - px, y - py
        g1 = -(dx * tx + dy * ty)
        # g'' = 1 - kappa * ((Q-P) . N)
        g2 = 1.0 - kappa * (-dx * ty + dy * tx)
        if abs(g2) < 1e-12:
            break
        step = g1 / g2
        s_new = min(max(s - step, 0.0), ref.length)
        if abs(s_new - s) < NEWTON_TOL:
            s = s_new
            break
        s = s_new
    return s


def foot_point(ref: ReferenceLine, x: float, y: float) -> float:
    """Arc length of the closest point on the reference line.

    Seeds Newton refinement from local minima of the sampled distance table.
    Raises ProjectionAmbiguous when two separated arc lengths are equally
    close (within 1e-6 m); ties at segment joints resolve to the smaller s.
    """
    dx = ref.sample_x - x
    dy = ref.sample_y - y
    d2 = dx * dx + dy * dy
    d = np.sqrt(d2)
    dmin = float(d.min())
    n = d.shape[0]
    seeds = []
    for i in range(n):
        left = d[i - 1] if i > 0 else math.inf
        right = d[i + 1] if i < n - 1 else math.inf
        if d[i] <= left and d[i] <= right and d[i] <= dmin + 2.0 * ref.SAMPLE_STEP:
            seeds.append(float(ref.sample_s[i]))
    candidates: list[tuple[float, float]] = []
    for s0 in seeds:
        s = _refine_foot_point(ref, x, y, s0)
        px, py = ref.point_at(s)
        dist = math.hypot(x - px, y - py)
        for cs, _ in candidates:
            if abs(cs - s) < 1e-6:
                break
        else:
            candidates.append((s, dist))
    best = min(c[1] for c in candidates)
    close = sorted((s, dist) for s, dist in candidates if dist <= best + 1e-6)
    if len(close) > 1 and close[-1][0] - close[0][0] > AMBIGUITY_SEPARATION:
        raise ProjectionAmbiguous(
            f"point ({x:.3f}, {y:.3f}) projects to s={close[0][0]:.3f} "
            f"and s={close[-1][0]:.3f} at equal distance")
    return close[0][0]


def cartesian_to_frenet(ref: ReferenceLine, pose: CartesianPose,
                        corridor_half_width: float = 10.0) -> FrenetPose:
    """Project a Cartesian pose onto the reference line.

    Raises OutOfCorridor when the lateral offset exceeds the corridor or
    reaches the local center of curvature.
    """
    s = foot_point(ref, pose.x, pose.y)
    px, py, theta, kappa = ref.pose_at(s)
    nx, ny = -math.sin(theta), math.cos(theta)
    l = (pose.x - px) * nx + (pose.y - py) * ny
    if abs(l) > corridor_half_width:
        raise OutOfCorridor(
            f"lateral offset {l:.3f} m exceeds corridor {corridor_half_width} m")
    one_minus_kl = 1.0 - kappa * l
    if one_minus_kl <= 1e-9:
        raise OutOfCorridor(
            f"offset {l:.3f} m reaches curvature center (kappa={kappa:.5f})")
    dtheta = normalize_angle(pose.heading - theta)
    cos_dt = math.cos(dtheta)
    s_dot = pose.speed * cos_dt / one_minus_kl
    l_prime = one_minus_kl * math.tan(dtheta)
    s_ddot = pose.accel * cos_dt / one_minus_kl
    l_pprime = 0.0
    return FrenetPose(s, l, s_dot, l_prime, s_ddot, l_pprime)


def frenet_to_cartesian(ref: ReferenceLine, fp: FrenetPose) -> CartesianPose:
    """Map a Frenet pose back to Cartesian coordinates.

    Raises CurvatureSingularity when l * kappa(s) >= 1.
    """
    px, py, theta, kappa = ref.pose_at(fp.s)
    one_minus_kl = 1.0 - kappa * fp.l
    if one_minus_kl <= 1e-9:
        raise CurvatureSingularity(
            f"l={fp.l:.3f} reaches curvature center at s={fp.s:.3f} "
            f"(kappa={kappa:.5f})")
    nx, ny = -math.sin(theta), math.cos(theta)
    x = px + fp.l * nx
    y = py + fp.l * ny
    dtheta = math.atan2(fp.l_prime, one_minus_kl)
    heading = normalize_angle(theta + dtheta)
    cos_dt = math.cos(dtheta)
    speed = fp.s_dot * one_minus_kl / cos_dt
    accel = fp.s_ddot * one_minus_kl / cos_dt
    return CartesianPose(x, y, heading, speed, accel)
