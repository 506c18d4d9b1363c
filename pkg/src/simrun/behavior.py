"""Car-following (IDM) and lane-change decision (MOBIL) models."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonPositiveGap


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.89  # desired speed, m/s; engine sets this per lane limit
    T: float = 1.5  # desired time headway, s
    s0: float = 2.0  # minimum standstill gap, m
    a_max: float = 2.0  # maximum acceleration, m/s^2
    b: float = 3.0  # comfortable deceleration, m/s^2
    delta: float = 4.0  # free-flow exponent
    b_emergency: float = 8.0  # hard deceleration floor, m/s^2

    def with_v0(self, v0: float) -> "IdmParams":
        return IdmParams(v0, self.T, self.s0, self.a_max, self.b,
                         self.delta, self.b_emergency)


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    a_threshold: float = 0.2  # m/s^2 net incentive needed to change
    b_safe: float = 4.0  # m/s^2 safety bound on the new follower
    bias_right: float = 0.1  # m/s^2 added to the right incentive


def idm_acceleration(v: float, gap: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration for speed v, bumper gap, and approach rate dv = v - v_lead.

    gap may be math.inf for a free road. Result is clamped to
    [-b_emergency, a_max].
    """
    if gap <= 0.0:
        raise NonPositiveGap(f"gap must be positive, got {gap}")
    v0 = max(p.v0, 0.1)
    free = (v / v0) ** p.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        s_star = p.s0 + max(0.0, v * p.T + v * dv / (2.0 * math.sqrt(p.a_max * p.b)))
        interaction = (s_star / gap) ** 2
    a = p.a_max * (1.0 - free - interaction)
    return min(max(a, -p.b_emergency), p.a_max)


@dataclass(frozen=True)
class LaneContext:
    """Gaps and speeds around the ego's projected slot in one lane.

    Gaps are bumper-to-bumper relative to the ego's current longitudinal
    position; math.inf means the slot is empty on that side.
    """

    leader_gap: float = math.inf
    leader_speed: float = 0.0
    follower_gap: float = math.inf
    follower_speed: float = 0.0


@dataclass(frozen=True)
class MobilContext:
    ego_speed: float
    ego_length: float
    current: LaneContext
    left: LaneContext | None = None  # None when no lane / change not allowed
    right: LaneContext | None = None


def _accel_toward(v: float, gap: float, v_lead: float, p: IdmParams) -> float:
    if math.isinf(gap):
        return idm_acceleration(v, math.inf, 0.0, p)
    return idm_acceleration(v, gap, v - v_lead, p)


def mobil_decide(ctx: MobilContext, idm: IdmParams,
                 mobil: MobilParams) -> str:
    """Return "stay", "change_left" or "change_right".

    A direction is feasible when the new follower's post-change IDM
    deceleration stays above -b_safe and the politeness-weighted acceleration
    gain exceeds a_threshold (right changes get bias_right added). When both
    directions are feasible the larger incentive wins; exact ties go right.
    """
    v = ctx.ego_speed
    cur = ctx.current
    a_ego = _accel_toward(v, cur.leader_gap, cur.leader_speed, idm)
    # Old follower before/after the ego leaves.
    if math.isinf(cur.follower_gap):
        old_gain = 0.0
    else:
        a_of = _accel_toward(cur.follower_speed, cur.follower_gap, v, idm)
        if math.isinf(cur.leader_gap):
            a_of_new = _accel_toward(cur.follower_speed, math.inf, 0.0, idm)
        else:
            a_of_new = _accel_toward(
                cur.follower_speed,
                cur.follower_gap + ctx.ego_length + cur.leader_gap,
                cur.leader_speed, idm)
        old_gain = a_of_new - a_of

    def evaluate(side: LaneContext | None, bias: float) -> float | None:
        if side is None:
            return None
        if side.leader_gap <= 0.0 or side.follower_gap <= 0.0:
            return None
        a_ego_new = _accel_toward(v, side.leader_gap, side.leader_speed, idm)
        if math.isinf(side.follower_gap):
            new_loss = 0.0
        else:
            a_nf_new = _accel_toward(side.follower_speed, side.follower_gap, v, idm)
            if a_nf_new < -mobil.b_safe:
                return None
            if math.isinf(side.leader_gap):
                a_nf = _accel_toward(side.follower_speed, math.inf, 0.0, idm)
            else:
                a_nf = _accel_toward(
                    side.follower_speed,
                    side.follower_gap + ctx.ego_length + side.leader_gap,
                    side.leader_speed, idm)
            new_loss = a_nf_new - a_nf
        incentive = (a_ego_new - a_ego
                     + mobil.politeness * (new_loss + old_gain)
                     + bias)
        if incentive <= mobil.a_threshold:
            return None
        return incentive

    left = evaluate(ctx.left, 0.0)
    right = evaluate(ctx.right, mobil.bias_right)
    if left is None and right is None:
        return "stay"
    if right is not None and (left is None or right >= left):
        return "change_right"
    return "change_left"
