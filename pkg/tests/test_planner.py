"""Tests for meta-action decisions, candidate planning, and scoring."""

import math
import random

import numpy as np
import pytest

from simrun.behavior import IdmParams
from simrun.errors import AllInfeasible
from simrun.frenet import CartesianPose, FrenetPose, frenet_to_cartesian
from simrun.geometry import ReferenceLine, Segment
from simrun.planner import (
    CHANGE_LEFT,
    CHANGE_RIGHT,
    KEEP_ACCEL,
    KEEP_CRUISE,
    KEEP_DECEL,
    Corridor,
    PlannerConfig,
    PlanningSnapshot,
    PlanVehicle,
    Prediction,
    TrafficModel,
    VehiclePlanner,
    build_corridor,
    conflict_stop_distance,
    dead_end_distance,
    forward_lanes,
    generate_candidates,
    predict_neighbors,
    score_candidates,
)
from simrun.road_network import parse_opendrive

RAMP_ROUTE = ("2.0.-3", "2.0.-2", "2.1.-2", "3.0.-2")


@pytest.fixture(scope="module")
def highway():
    return parse_opendrive("scenarios/maps/highway.xodr")


@pytest.fixture(scope="module")
def ramp():
    return parse_opendrive("scenarios/maps/ramp.xodr")


@pytest.fixture(scope="module")
def intersection():
    return parse_opendrive("scenarios/maps/intersection.xodr")


def make_vehicle(net, vid, lane_id, s, v, route, l=0.0, idm=None):
    lane = net.lane(lane_id)
    pose = frenet_to_cartesian(lane.center, FrenetPose(s, l, v))
    idx = route.index(lane_id) if lane_id in route else -1
    return PlanVehicle(vid=vid, lane_id=lane_id, s=s, l=l, speed=v, accel=0.0,
                       length=5.0, width=2.0, route=route, route_idx=idx,
                       idm=idm or IdmParams(), pose=pose)


def test_forward_lanes_follows_route(ramp):
    chain = forward_lanes(ramp, "2.0.-2", RAMP_ROUTE, 1, 900.0)
    assert chain[:3] == ["2.0.-2", "2.1.-2", "3.0.-2"]
    # lane drop: no successors and the route hop is lateral
    assert forward_lanes(ramp, "2.0.-3", RAMP_ROUTE, 0, 400.0) == ["2.0.-3"]


def test_corridor_locate(ramp):
    chain = forward_lanes(ramp, "2.0.-2", RAMP_ROUTE, 1, 400.0)
    cor = build_corridor(ramp, chain)
    total = sum(ramp.lane(u).length for u in chain)
    assert abs(cor.ref.length - total) < 1e-6
    first_len = ramp.lane(chain[0]).length
    lane, local = cor.locate(first_len + 5.0)
    assert lane == chain[1]
    assert abs(local - 5.0) < 1e-9
    lane, local = cor.locate(3.0)
    assert lane == chain[0]


def test_dead_end_distance(ramp):
    # next route entry is lateral: must stop before the lane runs out
    d = dead_end_distance(ramp, "2.0.-3", 100.0, RAMP_ROUTE, 0)
    lane_len = ramp.lane("2.0.-3").length
    assert abs(d - (lane_len - 100.0 - 3.0)) < 1e-9
    # next route entry is a successor: no constraint
    assert dead_end_distance(ramp, "2.0.-2", 100.0, RAMP_ROUTE, 1) is None
    # route ends on this lane: completion, not a dead end
    assert dead_end_distance(ramp, "3.0.-2", 10.0, RAMP_ROUTE, 3) is None


def test_reachable_headroom(ramp):
    pl = VehiclePlanner(ramp)
    assert pl.reachable("2.0.-2", "3.0.-2", 0.0)
    # one pending lateral hop with 100 m of lane left: fine
    assert pl.reachable("2.0.-3", "3.0.-2", 200.0)
    # 50 m left is below the 60 m per-change headroom: pruned
    assert not pl.reachable("2.0.-3", "3.0.-2", 250.0)
    # no path at all
    assert not pl.reachable("3.0.-2", "2.0.-2", 0.0)


def test_legal_actions_vocabulary(highway):
    pl = VehiclePlanner(highway)
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-2", 100.0, 10.0, route)
    snap = PlanningSnapshot(net=highway, vehicles={1: ego})
    assert pl.legal_actions(snap, 1) == [KEEP_CRUISE, KEEP_ACCEL, KEEP_DECEL,
                                         CHANGE_LEFT, CHANGE_RIGHT]
    ego_l = make_vehicle(highway, 1, "1.0.-1", 100.0, 10.0, ("1.0.-1",))
    snap_l = PlanningSnapshot(net=highway, vehicles={1: ego_l})
    acts = pl.legal_actions(snap_l, 1)
    assert CHANGE_LEFT not in acts and CHANGE_RIGHT in acts


def test_legal_actions_single_lane():
    net = parse_opendrive("scenarios/maps/single_lane.xodr")
    pl = VehiclePlanner(net)
    ego = make_vehicle(net, 1, "1.0.-1", 50.0, 10.0, ("1.0.-1",))
    snap = PlanningSnapshot(net=net, vehicles={1: ego})
    assert pl.legal_actions(snap, 1) == [KEEP_CRUISE, KEEP_ACCEL, KEEP_DECEL]


def _crossing_conflict(net):
    for uid in sorted(net.conflicts):
        for c in net.conflicts[uid]:
            if 5.0 < c.s_here < 25.0 and 5.0 < c.s_other < 25.0:
                return uid, c
    raise AssertionError("no mid-junction crossing in fixture")


def test_conflict_yield_strict_order(intersection):
    uid, c = _crossing_conflict(intersection)
    v = 10.0
    d = 15.0
    pos = {uid: [(c.s_here - d, v, 1)], c.other: [(c.s_other - d, v, 2)]}

    def occupants(lane):
        return pos.get(lane, ())

    # equal projected arrival: the lower id proceeds, the higher id yields
    stop1 = conflict_stop_distance(intersection, 1, uid, c.s_here - d, v,
                                   occupants)
    stop2 = conflict_stop_distance(intersection, 2, c.other, c.s_other - d, v,
                                   occupants)
    assert stop1 is None
    assert stop2 is not None and abs(stop2 - (d - 3.0)) < 1e-9
    # swapping ids swaps the roles
    pos2 = {uid: [(c.s_here - d, v, 2)], c.other: [(c.s_other - d, v, 1)]}
    stop_hi = conflict_stop_distance(intersection, 2, uid, c.s_here - d, v,
                                     lambda ln: pos2.get(ln, ()))
    assert stop_hi is not None


def test_conflict_zone_occupied_always_yields(intersection):
    uid, c = _crossing_conflict(intersection)
    # a stopped vehicle sitting on the conflict point: approach must yield
    pos = {c.other: [(c.s_other - 1.0, 0.0, 9)]}
    stop = conflict_stop_distance(intersection, 1, uid, c.s_here - 20.0, 8.0,
                                  lambda ln: pos.get(ln, ()))
    assert stop is not None
    # a vehicle far behind the point with a later arrival does not claim it
    pos_far = {c.other: [(c.s_other - 55.0, 4.0, 9)]}
    stop_far = conflict_stop_distance(intersection, 1, uid, c.s_here - 20.0,
                                      8.0, lambda ln: pos_far.get(ln, ()))
    assert stop_far is None


def _two_car_snapshot(net, ego_kw=None, lead_kw=None):
    route = ("1.0.-2",)
    ego = make_vehicle(net, 1, "1.0.-2", 50.0, 12.0, route, **(ego_kw or {}))
    lead = make_vehicle(net, 2, "1.0.-2", 75.0, 0.0, route, **(lead_kw or {}))
    return PlanningSnapshot(net=net, vehicles={1: ego, 2: lead})


def test_stopped_leader_prefers_change(highway):
    snap = _two_car_snapshot(highway)
    pl = VehiclePlanner(highway)
    for seed in range(3):
        assert pl.decide(snap, 1, seed) in (CHANGE_LEFT, CHANGE_RIGHT)


def test_decide_ranked_deterministic(highway):
    snap = _two_car_snapshot(highway)
    pl = VehiclePlanner(highway)
    a = pl.decide_ranked(snap, 1, 7)
    b = pl.decide_ranked(snap, 1, 7)
    assert a == b
    assert set(a) == {KEEP_CRUISE, KEEP_ACCEL, KEEP_DECEL, CHANGE_LEFT,
                      CHANGE_RIGHT}


def test_model_crash_is_terminal(highway):
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-2", 50.0, 12.0, route)
    lead = make_vehicle(highway, 2, "1.0.-2", 53.0, 0.0, route)
    snap = PlanningSnapshot(net=highway, vehicles={1: ego, 2: lead})
    model = TrafficModel(snap, 1, PlannerConfig(), lambda *a: True)
    state, reward = model.step(model.initial_state(), KEEP_CRUISE)
    assert model.is_terminal(state)
    assert reward == 0.0


def test_model_dead_end_brakes(ramp):
    ego = make_vehicle(ramp, 1, "2.0.-3", 280.0, 10.0, RAMP_ROUTE)
    snap = PlanningSnapshot(net=ramp, vehicles={1: ego})
    model = TrafficModel(snap, 1, PlannerConfig(), lambda *a: True)
    s0 = model.initial_state()
    s1, _ = model.step(s0, KEEP_CRUISE)
    v0_bin = s0[1][2]
    v1_bin = s1[1][2]
    assert v1_bin < v0_bin


def test_model_svo_blends_group_reward(highway):
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-2", 50.0, 12.0, route)
    # follower tailgating the ego: its low safety drags the group reward
    tail = make_vehicle(highway, 2, "1.0.-2", 41.0, 12.0, route)
    snap = PlanningSnapshot(net=highway, vehicles={1: ego, 2: tail})
    selfish = TrafficModel(snap, 1, PlannerConfig(), lambda *a: True)
    from simrun.planner import SvoWeights
    cfg = PlannerConfig(svo=SvoWeights(self_weight=0.5, group_weight=0.5))
    social = TrafficModel(snap, 1, cfg, lambda *a: True)
    _, r_self = selfish.step(selfish.initial_state(), KEEP_CRUISE)
    _, r_soc = social.step(social.initial_state(), KEEP_CRUISE)
    assert r_soc < r_self


def straight_corridor(length=500.0):
    ref = ReferenceLine([Segment(0.0, 0.0, 0.0, length, 0.0)])
    return Corridor(lanes=["x"], starts=[0.0], ref=ref)


def test_generate_candidates_lattice():
    cfg = PlannerConfig()
    cor = straight_corridor()
    fp = FrenetPose(10.0, 0.2, 8.0, 0.0, 0.0, 0.0)
    cands = generate_candidates(cor, fp, 20.0, KEEP_CRUISE, cfg)
    assert len(cands) == 15
    ends = sorted({round(float(t.l[-1]), 3) for t in cands})
    assert ends == sorted(cfg.lateral_offsets)
    for t in cands:
        assert abs(t.x[0] - 10.0) < 1e-6
        assert abs(t.y[0] - 0.2) < 1e-6
        assert t.speed.max() <= 20.0 + 0.5
        assert abs(t.t[1] - t.t[0] - cfg.dt) < 1e-12


def test_generate_candidates_speed_clamp():
    cfg = PlannerConfig()
    cor = straight_corridor()
    fp = FrenetPose(0.0, 0.0, 12.0, 0.0, 0.0, 0.0)
    cands = generate_candidates(cor, fp, 12.5, KEEP_ACCEL, cfg)
    end_speeds = {round(float(t.speed[-1]), 6) for t in cands}
    assert max(end_speeds) <= 12.5 + 1e-6


def _static_prediction(x, y, n, length=5.0, width=2.0):
    return Prediction(x=np.full(n, x), y=np.full(n, y), heading=np.zeros(n),
                      length=length, width=width)


def test_score_clear_beats_through():
    cfg = PlannerConfig()
    cor = straight_corridor()
    fp = FrenetPose(0.0, 0.0, 8.0, 0.0, 0.0, 0.0)
    cands = generate_candidates(cor, fp, 10.0, KEEP_CRUISE, cfg)
    n = max(len(c) for c in cands)
    # obstacle straddling the right edge at s=35: only left offsets clear it
    preds = {9: _static_prediction(35.0, -1.8, n)}
    costs, best = score_candidates(cands, preds, 5.0, 2.0, 10.0, cfg)
    assert math.isinf(costs.min()) is False
    assert np.isinf(costs).any()
    assert float(cands[best].l[-1]) >= 0.25  # winner swerves left


def test_score_all_blocked_raises():
    cfg = PlannerConfig()
    cor = straight_corridor()
    fp = FrenetPose(0.0, 0.0, 8.0, 0.0, 0.0, 0.0)
    cands = generate_candidates(cor, fp, 10.0, KEEP_CRUISE, cfg)
    n = max(len(c) for c in cands)
    preds = {9: _static_prediction(38.0, 0.0, n, length=40.0, width=12.0)}
    with pytest.raises(AllInfeasible):
        score_candidates(cands, preds, 5.0, 2.0, 10.0, cfg)


def test_score_permutation_invariant():
    cfg = PlannerConfig()
    cor = straight_corridor()
    fp = FrenetPose(0.0, 0.0, 8.0, 0.0, 0.0, 0.0)
    cands = generate_candidates(cor, fp, 10.0, KEEP_CRUISE, cfg)
    n = max(len(c) for c in cands)
    preds = {9: _static_prediction(35.0, 1.8, n)}
    _, best = score_candidates(cands, preds, 5.0, 2.0, 10.0, cfg)
    chosen = cands[best]
    rng = random.Random(3)
    shuffled = cands[:]
    rng.shuffle(shuffled)
    _, best2 = score_candidates(shuffled, preds, 5.0, 2.0, 10.0, cfg)
    assert np.allclose(shuffled[best2].x, chosen.x)
    assert np.allclose(shuffled[best2].l, chosen.l)


def test_score_empty_road_prefers_fast_centered():
    cfg = PlannerConfig()
    cor = straight_corridor()
    fp = FrenetPose(0.0, 0.0, 8.0, 0.0, 0.0, 0.0)
    cands = generate_candidates(cor, fp, 10.0, KEEP_CRUISE, cfg)
    costs, best = score_candidates(cands, {}, 5.0, 2.0, 10.0, cfg)
    chosen = cands[best]
    top = max(float(t.speed[-1]) for t in cands)
    assert abs(float(chosen.speed[-1]) - top) < 0.2
    assert abs(float(chosen.l[-1])) < 0.3


def test_predict_neighbors_follows_leader(highway):
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-1", 300.0, 10.0, ("1.0.-1",))
    lead = make_vehicle(highway, 2, "1.0.-2", 60.0, 4.0,
                        route, idm=IdmParams(v0=4.0))
    follow = make_vehicle(highway, 3, "1.0.-2", 40.0, 12.0, route)
    snap = PlanningSnapshot(net=highway,
                            vehicles={1: ego, 2: lead, 3: follow})
    cfg = PlannerConfig()
    preds = predict_neighbors(snap, 1, cfg)
    assert set(preds) == {2, 3}
    n = int(round(cfg.horizon / cfg.dt)) + 1
    assert len(preds[2].x) == n
    # follower closes in but never passes the leader
    gap = preds[2].x - preds[3].x
    assert gap.min() > 0.0
    assert gap[-1] < gap[0]


def test_predict_neighbors_uses_committed_tracks(highway):
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-1", 300.0, 10.0, ("1.0.-1",))
    lead = make_vehicle(highway, 2, "1.0.-2", 60.0, 4.0, route)
    free = make_vehicle(highway, 3, "1.0.-2", 40.0, 12.0, route)
    cfg = PlannerConfig()
    n = int(round(cfg.horizon / cfg.dt)) + 1
    track = Prediction(
        x=np.linspace(60.0, 80.0, n), y=np.full(n, -5.25),
        heading=np.zeros(n), length=lead.length, width=lead.width)
    lead.committed = track
    snap = PlanningSnapshot(net=highway, vehicles={1: ego, 2: lead, 3: free})
    preds = predict_neighbors(snap, 1, cfg)
    # committed neighbor is returned verbatim, the other is still rolled out
    assert preds[2] is track
    assert len(preds[3].x) == n
    assert abs(preds[3].x[-1] - preds[3].x[0]) > 1.0

    short = Prediction(
        x=track.x[:11], y=track.y[:11], heading=track.heading[:11],
        length=lead.length, width=lead.width)
    lead.committed = short
    preds = predict_neighbors(snap, 1, cfg)
    assert len(preds[2].x) == n
    assert float(preds[2].x[-1]) == float(short.x[-1])


def test_plan_fallback_to_next_action(highway):
    # stopped truck 32 m ahead: cruise candidates collide, slower action works
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-2", 50.0, 8.0, route)
    truck = make_vehicle(highway, 2, "1.0.-2", 82.0, 0.0, route,
                         idm=IdmParams(v0=0.1))
    snap = PlanningSnapshot(net=highway, vehicles={1: ego, 2: truck})
    pl = VehiclePlanner(highway)
    res = pl.plan(snap, 1, [KEEP_CRUISE, KEEP_DECEL])
    assert res.action == KEEP_DECEL
    assert res.fallback == "action_infeasible"
    assert float(res.trajectory.speed[-1]) < 8.0


def test_plan_emergency_stop(highway):
    route = ("1.0.-2",)
    ego = make_vehicle(highway, 1, "1.0.-2", 50.0, 12.0, route)
    wall = make_vehicle(highway, 2, "1.0.-2", 62.0, 0.0, route,
                        idm=IdmParams(v0=0.1))
    left = make_vehicle(highway, 3, "1.0.-1", 62.0, 0.0, ("1.0.-1",),
                        idm=IdmParams(v0=0.1))
    right = make_vehicle(highway, 4, "1.0.-3", 62.0, 0.0, ("1.0.-3",),
                         idm=IdmParams(v0=0.1))
    snap = PlanningSnapshot(net=highway,
                            vehicles={1: ego, 2: wall, 3: left, 4: right})
    pl = VehiclePlanner(highway)
    res = pl.plan(snap, 1, [KEEP_CRUISE])
    assert res.fallback == "emergency_stop"
    assert float(res.trajectory.speed[-1]) < 0.5


def test_plan_keep_matches_start_pose(highway):
    snap = _two_car_snapshot(highway)
    pl = VehiclePlanner(highway)
    res = pl.plan(snap, 1, [KEEP_CRUISE])
    ego = snap.vehicles[1]
    assert abs(res.trajectory.x[0] - ego.pose.x) < 1e-6
    assert abs(res.trajectory.y[0] - ego.pose.y) < 1e-6
    assert res.base_lane == "1.0.-2"
