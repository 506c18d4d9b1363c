"""Two-layer motion planning for vehicles under full planning detail.

Upper layer: UCT search over meta-actions (keep lane at three speed commands,
change left/right) on an abstract traffic model with 1 s decision epochs.
Lower layer: a lattice of quintic trajectory candidates for the chosen action
(5 terminal lateral offsets x 3 terminal speeds), scored against predicted
neighbor motion for collisions, efficiency, comfort and lane deviation.

The same arrival-time yielding rule used by the engine at junction conflict
points is exposed here (conflict_stop_distance) so the abstract model and the
integration loop brake for the same virtual leaders.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace

import numpy as np

from .behavior import IdmParams, idm_acceleration
from .errors import AllInfeasible, NoRoute
from .frenet import CartesianPose, FrenetPose, cartesian_to_frenet, frenet_to_cartesian
from .geometry import ReferenceLine, rectangles_overlap
from .mcts import MctsConfig, search_tree
from .quintic import Trajectory, plan_quintic
from .road_network import RoadNetwork, route

KEEP_CRUISE = "keep_lane_cruise"
KEEP_ACCEL = "keep_lane_accelerate"
KEEP_DECEL = "keep_lane_decelerate"
CHANGE_LEFT = "change_left"
CHANGE_RIGHT = "change_right"
META_ACTIONS = (KEEP_CRUISE, KEEP_ACCEL, KEEP_DECEL, CHANGE_LEFT, CHANGE_RIGHT)

ACTION_COMMAND = {KEEP_CRUISE: 0.0, KEEP_ACCEL: 1.5, KEEP_DECEL: -1.5,
                  CHANGE_LEFT: 0.0, CHANGE_RIGHT: 0.0}

CONFLICT_HORIZON = 60.0  # m lookahead to junction conflict points
CONFLICT_MARGIN = 3.0  # m stop margin before a conflict point
CONFLICT_ZONE = (6.0, 2.0)  # m before/after the point counted as occupied
DEAD_END_MARGIN = 3.0  # m stop margin before a lane with no continuation


@dataclass(frozen=True)
class MetaAction:
    kind: str
    duration: float = 1.0


@dataclass
class Prediction:
    """Sampled future motion of one neighbor on the planning time grid."""

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    length: float
    width: float


@dataclass
class PlanVehicle:
    """Frozen per-vehicle view handed to the planner."""

    vid: int
    lane_id: str
    s: float
    l: float
    speed: float
    accel: float
    length: float
    width: float
    route: tuple[str, ...]
    route_idx: int
    idm: IdmParams
    pose: CartesianPose
    committed: Prediction | None = None


@dataclass
class PlanningSnapshot:
    net: RoadNetwork
    vehicles: dict[int, PlanVehicle]
    time: float = 0.0


@dataclass(frozen=True)
class SvoWeights:
    self_weight: float = 1.0
    group_weight: float = 0.0


@dataclass
class PlannerConfig:
    horizon: float = 5.0
    change_duration: float = 3.0
    dt: float = 0.1
    epoch: float = 1.0
    mcts: MctsConfig = field(default_factory=MctsConfig)
    svo: SvoWeights = field(default_factory=SvoWeights)
    corridor_length: float = 250.0
    change_headroom: float = 60.0  # m of lane left, per pending lane change
    lateral_offsets: tuple = (-0.5, -0.25, 0.0, 0.25, 0.5)
    speed_step: float = 1.5
    command_accel: float = 1.5
    w_safety: float = 1.0
    w_efficiency: float = 0.3
    w_comfort: float = 0.2
    w_deviation: float = 0.1
    safe_clearance: float = 5.0
    safe_headway: float = 0.6  # s of speed-proportional front clearance
    jerk_ref: float = 4.0


# ---------------------------------------------------------------------------
# Route-forward corridors


@dataclass
class Corridor:
    """Chain of lane center lines glued into one reference line."""

    lanes: list[str]
    starts: list[float]  # corridor s where each lane begins
    ref: ReferenceLine

    def locate(self, s: float) -> tuple[str, float]:
        i = max(0, bisect_right(self.starts, s) - 1)
        return self.lanes[i], s - self.starts[i]


def forward_lanes(net: RoadNetwork, lane_id: str, rte: tuple[str, ...],
                  route_idx: int, max_length: float) -> list[str]:
    """Lane chain ahead following the route's successor hops.

    Lateral route hops do not consume distance; the chain continues through
    them on the current lane's own successors (smallest id) so a vehicle that
    has not changed yet still has geometry to follow.
    """
    chain = [lane_id]
    length = net.lane(lane_id).length
    cur = lane_id
    idx = route_idx if 0 <= route_idx < len(rte) and rte[route_idx] == lane_id else -1
    while length < max_length:
        lane = net.lane(cur)
        if idx >= 0 and idx + 1 < len(rte) and rte[idx + 1] in lane.successors:
            nxt = rte[idx + 1]
            idx += 1
        elif lane.successors:
            nxt = lane.successors[0]
            idx = -1
        else:
            break
        if nxt in chain:
            break
        chain.append(nxt)
        length += net.lane(nxt).length
        cur = nxt
    return chain


def build_corridor(net: RoadNetwork, lanes: list[str]) -> Corridor:
    refs = [net.lane(u).center for u in lanes]
    starts = [0.0]
    for r in refs[:-1]:
        starts.append(starts[-1] + r.length)
    return Corridor(lanes=list(lanes), starts=starts,
                    ref=ReferenceLine.concat(refs))


# ---------------------------------------------------------------------------
# Junction conflict yielding (shared with the engine)


def conflict_stop_distance(net: RoadNetwork, vid: int, lane_id: str, s: float,
                           speed: float, occupants,
                           next_lane: str | None = None) -> float | None:
    """Distance to a virtual stopped leader before a junction conflict point.

    occupants(lane_uid) must yield (s, speed, vid) tuples for vehicles on the
    lane. A vehicle yields when the crossing lane is occupied at the point or
    when another vehicle's projected arrival strictly precedes its own
    ((time, id) lexicographic order, so mutual yielding is impossible).
    Returns None when no yield is needed.
    """
    lane = net.lane(lane_id)
    checks: list[tuple[float, object]] = []
    for c in net.conflicts.get(lane_id, []):
        checks.append((c.s_here - s, c))
    if next_lane is not None:
        ahead = lane.length - s
        if ahead < CONFLICT_HORIZON:
            for c in net.conflicts.get(next_lane, []):
                checks.append((ahead + c.s_here, c))
    best = None
    for dist, c in checks:
        if dist < 0.5 or dist > CONFLICT_HORIZON:
            continue
        t_self = dist / max(speed, 1.0)
        if _conflict_claimed(net, c, t_self, vid, occupants):
            stop = dist - CONFLICT_MARGIN
            if best is None or stop < best:
                best = stop
    return best


def _conflict_claimed(net: RoadNetwork, conflict, t_self: float, vid: int,
                      occupants) -> bool:
    lanes = [(conflict.other, 0.0)]
    other = net.lane(conflict.other)
    for pred in other.predecessors:
        lanes.append((pred, net.lane(pred).length))
    for lane_uid, offset in lanes:
        for s_w, v_w, wid in occupants(lane_uid):
            if wid == vid:
                continue
            rel = conflict.s_other + offset - s_w
            if offset == 0.0 and -CONFLICT_ZONE[1] <= rel <= CONFLICT_ZONE[0]:
                return True  # sitting in the conflict zone
            if rel <= 0:
                continue  # already past the point
            t_other = rel / max(v_w, 1.0)
            if (t_other, wid) < (t_self, vid):
                return True
    return False


def dead_end_distance(net: RoadNetwork, lane_id: str, s: float,
                      rte: tuple[str, ...], route_idx: int) -> float | None:
    """Distance to where this lane stops serving the route, if it does.

    A lateral route hop means the current lane must be left before it ends;
    a lane with no successors ends outright. Either way the vehicle must be
    able to stop at the boundary while it waits for a gap.
    """
    if route_idx + 1 >= len(rte):
        return None  # route ends on this lane; end handled as completion
    lane = net.lane(lane_id)
    if rte[route_idx + 1] in lane.successors:
        return None
    return lane.length - s - DEAD_END_MARGIN


# ---------------------------------------------------------------------------
# Abstract decision model

S_BIN = 2.0
V_BIN = 1.0
CRASH = ("crash",)
MODEL_SUBSTEP = 0.5


@dataclass
class _AbstractVehicle:
    lane_id: str
    s: float
    v: float
    gone: bool = False


class TrafficModel:
    """Deterministic abstract model of the AoI traffic for UCT search.

    States are tuples of (lane_id, s_bin, v_bin) per vehicle, the deciding
    vehicle first; transitions decode bins at their centers, integrate one
    epoch of IDM-governed motion, and re-encode, so the search is Markov on
    the abstract state.
    """

    def __init__(self, snapshot: PlanningSnapshot, ego_id: int,
                 cfg: PlannerConfig, change_allowed):
        self.net = snapshot.net
        self.cfg = cfg
        self.ego_id = ego_id
        self.order = [ego_id] + sorted(v for v in snapshot.vehicles if v != ego_id)
        self.info = {vid: snapshot.vehicles[vid] for vid in self.order}
        self.change_allowed = change_allowed  # (lane_id, direction) -> bool

    # -- state codec --

    def encode(self, vehicles: list[_AbstractVehicle]) -> tuple:
        out = []
        for v in vehicles:
            if v.gone:
                out.append(("gone", 0, 0))
            else:
                out.append((v.lane_id, int(v.s // S_BIN), int(v.v // V_BIN)))
        return tuple(out)

    def decode(self, state: tuple) -> list[_AbstractVehicle]:
        out = []
        for lane_id, sb, vb in state:
            if lane_id == "gone":
                out.append(_AbstractVehicle("", 0.0, 0.0, gone=True))
            else:
                out.append(_AbstractVehicle(lane_id, sb * S_BIN + S_BIN / 2,
                                            vb * V_BIN + V_BIN / 2))
        return out

    def initial_state(self) -> tuple:
        vs = [
            _AbstractVehicle(self.info[vid].lane_id, self.info[vid].s,
                             self.info[vid].speed)
            for vid in self.order
        ]
        return ("ok",) + self.encode(vs)

    # -- model protocol --

    def is_terminal(self, state) -> bool:
        return state[0] == CRASH

    def legal_actions(self, state):
        if self.is_terminal(state):
            return []
        if state[1][0] == "gone":
            # absorbing success state: the route is complete
            return [KEEP_CRUISE]
        lane_id, sb, _ = state[1]
        ego_lane = self.net.lane(lane_id)
        s = sb * S_BIN + S_BIN / 2
        actions = [KEEP_CRUISE, KEEP_ACCEL, KEEP_DECEL]
        if ego_lane.left_neighbor and ego_lane.change_permission in ("left", "both") \
                and self.change_allowed(ego_lane.uid, "left", s):
            actions.append(CHANGE_LEFT)
        if ego_lane.right_neighbor and ego_lane.change_permission in ("right", "both") \
                and self.change_allowed(ego_lane.uid, "right", s):
            actions.append(CHANGE_RIGHT)
        return actions

    def rollout_action(self, state, rng):
        return KEEP_CRUISE

    def step(self, state, action):
        vehicles = self.decode(state[1:])
        ego = vehicles[0]
        changing = False
        if action in (CHANGE_LEFT, CHANGE_RIGHT) and not ego.gone:
            lane = self.net.lane(ego.lane_id)
            target = lane.left_neighbor if action == CHANGE_LEFT else lane.right_neighbor
            if target is None:
                return CRASH_STATE, 0.0
            pose = frenet_to_cartesian(lane.center, FrenetPose(min(ego.s, lane.length), 0.0))
            fp = cartesian_to_frenet(self.net.lane(target).center,
                                     CartesianPose(pose.x, pose.y, pose.heading))
            ego.lane_id = target
            ego.s = min(max(fp.s, 0.0), self.net.lane(target).length)
            changing = True
        accels = {}
        crash = False
        for _ in range(int(round(self.cfg.epoch / MODEL_SUBSTEP))):
            occ = self._occupancy(vehicles)
            for i, v in enumerate(vehicles):
                if v.gone:
                    continue
                vid = self.order[i]
                cmd = ACTION_COMMAND[action] if i == 0 else 0.0
                a = self._accel(v, vid, occ, cmd)
                accels[i] = a
                v.v = max(0.0, v.v + a * MODEL_SUBSTEP)
                v.s += v.v * MODEL_SUBSTEP
            self._rollover(vehicles)
            if self._collision(vehicles):
                crash = True
                break
        if crash:
            return CRASH_STATE, 0.0
        reward = self._reward(vehicles, accels, changing)
        return ("ok",) + self.encode(vehicles), reward

    # -- internals --

    def _occupancy(self, vehicles: list[_AbstractVehicle]):
        occ: dict[str, list[tuple[float, float, int]]] = {}
        for i, v in enumerate(vehicles):
            if not v.gone:
                occ.setdefault(v.lane_id, []).append((v.s, v.v, self.order[i]))
        for lst in occ.values():
            lst.sort()
        return occ

    def _forward(self, info: PlanVehicle, lane_id: str) -> list[str]:
        if lane_id in info.route:
            idx = info.route.index(lane_id)
        else:
            idx = len(info.route)
        return forward_lanes(self.net, lane_id, info.route, idx, 80.0)

    def _accel(self, v: _AbstractVehicle, vid: int, occ, cmd: float) -> float:
        info = self.info[vid]
        idm = info.idm
        chain = self._forward(info, v.lane_id)
        gap, v_lead = self._leader(v, vid, chain, occ)
        stop = conflict_stop_distance(
            self.net, vid, v.lane_id, v.s, v.v,
            lambda uid: occ.get(uid, ()),
            next_lane=chain[1] if len(chain) > 1 else None)
        dead = self._route_dead_end(info, v)
        for extra in (stop, dead):
            if extra is not None:
                virtual = max(extra, 0.3)
                if virtual < gap:
                    gap, v_lead = virtual, 0.0
        a_follow = idm_acceleration(v.v, gap, v.v - v_lead, idm)
        return min(cmd, a_follow) if vid == self.ego_id else a_follow

    def _route_dead_end(self, info: PlanVehicle, v: _AbstractVehicle) -> float | None:
        if v.lane_id not in info.route:
            return None
        idx = info.route.index(v.lane_id)
        return dead_end_distance(self.net, v.lane_id, v.s, info.route, idx)

    def _leader(self, v: _AbstractVehicle, vid: int, chain: list[str],
                occ) -> tuple[float, float]:
        offset = 0.0
        for k, lane_uid in enumerate(chain):
            base = -v.s if k == 0 else offset
            for s_w, v_w, wid in occ.get(lane_uid, ()):
                if wid == vid:
                    continue
                rel = s_w + base
                if rel > 0.01:
                    gap = rel - 0.5 * (self.info[vid].length
                                       + self.info[wid].length)
                    return max(gap, 0.01), v_w
            if k == 0:
                offset = self.net.lane(lane_uid).length - v.s
            else:
                offset += self.net.lane(lane_uid).length
            if offset > 80.0:
                break
        return math.inf, 0.0

    def _rollover(self, vehicles: list[_AbstractVehicle]) -> None:
        for i, v in enumerate(vehicles):
            if v.gone:
                continue
            info = self.info[self.order[i]]
            while v.s > self.net.lane(v.lane_id).length:
                chain = self._forward(info, v.lane_id)
                if len(chain) < 2:
                    if v.lane_id == info.route[-1]:
                        v.gone = True
                    else:
                        v.s = self.net.lane(v.lane_id).length
                        v.v = 0.0
                    break
                v.s -= self.net.lane(v.lane_id).length
                v.lane_id = chain[1]

    def _collision(self, vehicles: list[_AbstractVehicle]) -> bool:
        ego = vehicles[0]
        if ego.gone:
            return False
        for i, w in enumerate(vehicles[1:], start=1):
            if w.gone or w.lane_id != ego.lane_id:
                continue
            min_gap = 0.5 * (self.info[self.order[0]].length
                             + self.info[self.order[i]].length)
            if abs(w.s - ego.s) < min_gap:
                return True
        return False

    def _reward(self, vehicles: list[_AbstractVehicle], accels: dict,
                changing: bool) -> float:
        occ = self._occupancy(vehicles)

        def score(i: int, v: _AbstractVehicle) -> float:
            vid = self.order[i]
            info = self.info[vid]
            chain = self._forward(info, v.lane_id)
            gap, _ = self._leader(v, vid, chain, occ)
            if math.isinf(gap):
                safety = 1.0
            else:
                safety = min(1.0, max(0.0, gap / (info.idm.s0 + v.v * info.idm.T)))
            limit = min(self.net.lane(v.lane_id).speed_limit, info.idm.v0)
            eff = min(1.0, v.v / max(limit, 0.1))
            a = accels.get(i, 0.0)
            if i == 0 and changing:
                a = math.hypot(a, 1.5)
            comfort = 1.0 - min(1.0, abs(a) / 4.0)
            return (safety + eff + comfort) / 3.0

        # a finished route is absorbing success: the best possible score
        ego_score = 1.0 if vehicles[0].gone else score(0, vehicles[0])
        others = [score(i, v) for i, v in enumerate(vehicles)
                  if i > 0 and not v.gone]
        svo = self.cfg.svo
        total = svo.self_weight + (svo.group_weight if others else 0.0)
        blended = svo.self_weight * ego_score
        if others and svo.group_weight > 0.0:
            blended += svo.group_weight * (sum(others) / len(others))
        return blended / max(total, 1e-9)


CRASH_STATE = (CRASH, ("crash", 0, 0))


# ---------------------------------------------------------------------------
# Trajectory candidates and scoring


def sane_start(fp: FrenetPose) -> FrenetPose:
    """Cap the lateral slope of a projected start pose.

    The projection derives l_prime from the pose heading, which is noise at
    crawl speeds; left unclamped, the quintic boundary conditions would turn
    it into a multi-meter lateral swing.
    """
    lp = min(max(fp.l_prime, -0.5), 0.5)
    lpp = min(max(fp.l_pprime, -0.2), 0.2)
    if fp.s_dot < 1.0:
        lp = 0.0
        lpp = 0.0
    if lp != fp.l_prime or lpp != fp.l_pprime:
        fp = replace(fp, l_prime=lp, l_pprime=lpp)
    return fp


def generate_candidates(corridor: Corridor, fp: FrenetPose, speed_limit: float,
                        action: str, cfg: PlannerConfig) -> list[Trajectory]:
    """Quintic lattice for one meta-action: offsets x terminal speeds."""
    duration = cfg.change_duration if action in (CHANGE_LEFT, CHANGE_RIGHT) \
        else cfg.horizon
    v_base = fp.s_dot + ACTION_COMMAND[action] * duration
    v_base = min(max(v_base, 0.0), speed_limit)
    speeds = []
    for k in (-1, 0, 1):
        v = min(max(v_base + k * cfg.speed_step, 0.0), speed_limit)
        if not any(abs(v - u) < 1e-9 for u in speeds):
            speeds.append(v)
    out = []
    for v_end in speeds:
        s_end = fp.s + max((fp.s_dot + v_end) / 2.0, 0.1) * duration
        for offset in cfg.lateral_offsets:
            end = FrenetPose(s_end, offset, v_end, 0.0, 0.0, 0.0)
            out.append(plan_quintic(corridor.ref, fp, end, duration, cfg.dt))
    return out


def _fit_track(pred: Prediction, n: int) -> Prediction:
    """Clip or pad (holding the last sample) a track to n samples."""
    if len(pred.x) == n:
        return pred
    if len(pred.x) > n:
        return Prediction(pred.x[:n], pred.y[:n], pred.heading[:n],
                          pred.length, pred.width)
    k = n - len(pred.x)
    return Prediction(
        np.concatenate([pred.x, np.full(k, pred.x[-1])]),
        np.concatenate([pred.y, np.full(k, pred.y[-1])]),
        np.concatenate([pred.heading, np.full(k, pred.heading[-1])]),
        pred.length, pred.width)


def predict_neighbors(snapshot: PlanningSnapshot, ego_id: int,
                      cfg: PlannerConfig) -> dict[int, Prediction]:
    """Future motion of every neighbor on the planning time grid.

    Neighbors carrying a committed trajectory are read back verbatim; the
    rest get a constant-policy IDM rollout on their own lane chain.  The
    deciding vehicle rides along as a constant-speed obstacle so rollout
    followers react to it, but its own future is left to the candidates.
    """
    net = snapshot.net
    steps = int(round(cfg.horizon / cfg.dt))
    out: dict[int, Prediction] = {}
    pending = set()
    for vid, info in snapshot.vehicles.items():
        if vid == ego_id:
            continue
        if info.committed is not None:
            out[vid] = _fit_track(info.committed, steps + 1)
        else:
            pending.add(vid)
    if not pending:
        return out
    tm = TrafficModel(snapshot, ego_id, cfg, lambda lane, side, s: False)
    vehicles = [
        _AbstractVehicle(tm.info[vid].lane_id, tm.info[vid].s,
                         tm.info[vid].speed)
        for vid in tm.order
    ]
    lat = {vid: tm.info[vid].l for vid in tm.order}
    tracks = {vid: ([], [], []) for vid in tm.order[1:] if vid in pending}

    def record(t: float) -> None:
        for i, v in enumerate(vehicles):
            vid = tm.order[i]
            if vid not in tracks:
                continue
            xs, ys, hs = tracks[vid]
            if v.gone:
                xs.append(1e9)
                ys.append(1e9)
                hs.append(0.0)
                continue
            lane = net.lane(v.lane_id)
            l = lat[vid] * max(0.0, 1.0 - t / 3.0)
            pose = frenet_to_cartesian(
                lane.center, FrenetPose(min(v.s, lane.length), l, v.v))
            xs.append(pose.x)
            ys.append(pose.y)
            hs.append(pose.heading)

    record(0.0)
    for k in range(steps):
        occ = tm._occupancy(vehicles)
        for i, v in enumerate(vehicles):
            if v.gone or tm.order[i] == ego_id:
                continue
            a = tm._accel(v, tm.order[i], occ, 0.0)
            v.v = max(0.0, v.v + a * cfg.dt)
        for v in vehicles:
            if not v.gone:
                v.s += v.v * cfg.dt
        tm._rollover(vehicles)
        record((k + 1) * cfg.dt)
    out.update({
        vid: Prediction(np.asarray(xs), np.asarray(ys), np.asarray(hs),
                        tm.info[vid].length, tm.info[vid].width)
        for vid, (xs, ys, hs) in tracks.items()
    })
    return out


def score_candidates(candidates: list[Trajectory],
                     predictions: dict[int, Prediction], ego_length: float,
                     ego_width: float, speed_limit: float, cfg: PlannerConfig,
                     target_l: float = 0.0) -> tuple[np.ndarray, int]:
    """Weighted cost per candidate; collisions are infeasible (inf).

    Returns (costs, best_index); raises AllInfeasible when every candidate
    collides with a predicted neighbor.
    """
    costs = np.full(len(candidates), math.inf)
    ego_diag = 0.5 * math.hypot(ego_length, ego_width)
    for ci, traj in enumerate(candidates):
        n = len(traj)
        # Lateral candidates must respect the follower in the target lane;
        # in-lane braking never yields to rear predictions, which cannot
        # know the ego is about to slow and therefore overshoot.
        lateral = abs(float(traj.l[-1]) - float(traj.l[0])) > 1.0
        cos_h = np.cos(traj.heading)
        sin_h = np.sin(traj.heading)
        worst = 0.0
        collided = False
        for pred in predictions.values():
            dx = pred.x[:n] - traj.x
            dy = pred.y[:n] - traj.y
            dist = np.hypot(dx, dy)
            diag = ego_diag + 0.5 * math.hypot(pred.length, pred.width)
            clear = dist - diag
            fore = cos_h * dx + sin_h * dy
            for k in np.nonzero(clear < 0.5)[0]:
                if (fore[k] > 0.0 or lateral) and rectangles_overlap(
                        (traj.x[k], traj.y[k], traj.heading[k],
                         ego_length, ego_width),
                        (pred.x[k], pred.y[k], pred.heading[k],
                         pred.length, pred.width)):
                    collided = True
                    break
            if collided:
                break
            # Side-by-side neighbors only matter through actual overlap.
            corridor = (np.abs(cos_h * dy - sin_h * dx)
                        < 0.5 * (ego_width + pred.width) + 0.4)
            ahead = corridor & (fore > 0.0)
            if ahead.any():
                req = cfg.safe_clearance + cfg.safe_headway * traj.speed[ahead]
                worst = max(worst, float(((req - clear[ahead]) / req).max()))
            behind = corridor & ~ahead
            if behind.any():
                req = cfg.safe_clearance
                worst = max(worst, float((req - clear[behind].min()) / req))
        if collided:
            continue
        safety = min(1.0, max(0.0, worst))
        efficiency = min(1.0, max(0.0, 1.0 - float(traj.speed.mean())
                                  / max(speed_limit, 0.1)))
        comfort = min(1.0, float((traj.jerk ** 2).mean()) / cfg.jerk_ref ** 2)
        deviation = min(1.0, abs(float(traj.l[-1]) - target_l) / 1.75)
        costs[ci] = (cfg.w_safety * safety + cfg.w_efficiency * efficiency
                     + cfg.w_comfort * comfort + cfg.w_deviation * deviation)
    if not np.isfinite(costs).any():
        raise AllInfeasible("every trajectory candidate collides")
    return costs, int(np.argmin(costs))


# ---------------------------------------------------------------------------
# Facade


@dataclass
class PlanResult:
    action: str
    trajectory: Trajectory
    corridor: Corridor
    base_lane: str
    cost: float
    fallback: str | None = None


class VehiclePlanner:
    """Meta-action decisions plus trajectory planning over one road network."""

    def __init__(self, net: RoadNetwork, cfg: PlannerConfig | None = None):
        self.net = net
        self.cfg = cfg or PlannerConfig()
        self._reachable: dict[tuple[str, str], bool] = {}
        self._corridors: dict[tuple[str, ...], Corridor] = {}

    def _route_to(self, lane_id: str, destination: str) -> tuple[str, ...] | None:
        key = (lane_id, destination)
        if key not in self._reachable:
            try:
                self._reachable[key] = tuple(route(self.net, lane_id, destination))
            except NoRoute:
                self._reachable[key] = None
        return self._reachable[key]

    def reachable(self, lane_id: str, destination: str, s: float = 0.0) -> bool:
        """True when destination is reachable with room for every lane change.

        Each lateral hop remaining on the path needs change_headroom meters of
        lane left before the hop's lane runs out, so a change that could no
        longer be completed in time is not offered.
        """
        r = self._route_to(lane_id, destination)
        if r is None:
            return False
        entry = s
        i = 0
        while i < len(r) - 1:
            lane = self.net.lane(r[i])
            if r[i + 1] in lane.successors:
                entry = 0.0
                i += 1
                continue
            j = i
            while j < len(r) - 1 and r[j + 1] not in self.net.lane(r[j]).successors:
                j += 1
            hops = j - i
            if lane.length - entry < self.cfg.change_headroom * hops:
                return False
            i = j
        return True

    def legal_actions(self, snapshot: PlanningSnapshot, ego_id: int) -> list[str]:
        ego = snapshot.vehicles[ego_id]
        lane = self.net.lane(ego.lane_id)
        dest = ego.route[-1]
        actions = [KEEP_CRUISE, KEEP_ACCEL, KEEP_DECEL]
        if lane.left_neighbor and lane.change_permission in ("left", "both") \
                and self.reachable(lane.left_neighbor, dest, ego.s):
            actions.append(CHANGE_LEFT)
        if lane.right_neighbor and lane.change_permission in ("right", "both") \
                and self.reachable(lane.right_neighbor, dest, ego.s):
            actions.append(CHANGE_RIGHT)
        return actions

    def _model(self, snapshot: PlanningSnapshot, ego_id: int) -> TrafficModel:
        dest = snapshot.vehicles[ego_id].route[-1]

        def allowed(lane: str, side: str, s: float) -> bool:
            target = getattr(self.net.lane(lane), side + "_neighbor")
            return target is not None and self.reachable(target, dest, s)

        return TrafficModel(snapshot, ego_id, self.cfg, allowed)

    def decide(self, snapshot: PlanningSnapshot, ego_id: int, seed: int,
               iterations: int | None = None) -> str:
        return self.decide_ranked(snapshot, ego_id, seed, iterations)[0]

    def decide_ranked(self, snapshot: PlanningSnapshot, ego_id: int, seed: int,
                      iterations: int | None = None) -> list[str]:
        """Meta-actions ordered by UCT visit count, best first."""
        model = self._model(snapshot, ego_id)
        mcfg = self.cfg.mcts if iterations is None \
            else replace(self.cfg.mcts, iterations=iterations)
        state = model.initial_state()
        legal = model.legal_actions(state) if not model.is_terminal(state) else []
        if not legal:
            return [KEEP_DECEL]
        root = search_tree(model, state, mcfg, seed)
        order = {a: k for k, a in enumerate(legal)}
        ranked = sorted(root.children,
                        key=lambda c: (-c.visits, order.get(c.action, 99)))
        return [c.action for c in ranked] or legal

    def corridor_for(self, ego: PlanVehicle, base_lane: str) -> Corridor:
        if base_lane in ego.route:
            lanes: tuple[str, ...] = ego.route
            idx = ego.route.index(base_lane)
        else:
            # change target off the current route: chain along the rerouted
            # path the vehicle adopts if the change commits, so the corridor
            # crosses junctions instead of ending at the neighbor lane
            lanes = self._route_to(base_lane, ego.route[-1]) or (base_lane,)
            idx = 0
        chain = forward_lanes(self.net, base_lane, lanes, idx,
                              self.cfg.corridor_length)
        key = tuple(chain)
        if key not in self._corridors:
            self._corridors[key] = build_corridor(self.net, chain)
        return self._corridors[key]

    def plan(self, snapshot: PlanningSnapshot, ego_id: int,
             actions: str | list[str]) -> PlanResult:
        """Plan the first feasible action from a ranked list.

        When the requested action has no collision-free candidate the next
        action is tried (fallback recorded), ending with an emergency stop.
        """
        ego = snapshot.vehicles[ego_id]
        predictions = predict_neighbors(snapshot, ego_id, self.cfg)
        chain = [actions] if isinstance(actions, str) else list(actions)
        for fb in (KEEP_CRUISE, KEEP_DECEL):
            if fb not in chain:
                chain.append(fb)
        requested = chain[0]
        for act in chain:
            lane = self.net.lane(ego.lane_id)
            if act == CHANGE_LEFT:
                base = lane.left_neighbor
            elif act == CHANGE_RIGHT:
                base = lane.right_neighbor
            else:
                base = ego.lane_id
            if base is None:
                continue
            corridor = self.corridor_for(ego, base)
            try:
                fp = sane_start(cartesian_to_frenet(corridor.ref, ego.pose))
            except Exception:
                continue
            # candidates never chase the lane limit past the driver's own
            # desired speed, or free-flow platoons would creep to the limit
            limit = min(self.net.lane(base).speed_limit, ego.idm.v0)
            cands = generate_candidates(corridor, fp, limit, act, self.cfg)
            try:
                costs, best = score_candidates(
                    cands, predictions, ego.length, ego.width, limit, self.cfg)
            except AllInfeasible:
                continue
            fallback = None if act == requested else "action_infeasible"
            return PlanResult(act, cands[best], corridor, base,
                              float(costs[best]), fallback)
        return self._emergency_stop(ego)

    def _emergency_stop(self, ego: PlanVehicle) -> PlanResult:
        corridor = self.corridor_for(ego, ego.lane_id)
        # last resort: must produce a trajectory however far the pose strayed
        fp = cartesian_to_frenet(corridor.ref, ego.pose,
                                 corridor_half_width=math.inf)
        fp = replace(fp, l_prime=0.0, l_pprime=0.0)
        v = max(fp.s_dot, 0.0)
        brake = 6.0
        T = max(math.ceil(v / brake / self.cfg.dt), 2) * self.cfg.dt
        # brake in a straight line; re-centering can wait until moving again
        end = FrenetPose(fp.s + v * T / 2.0, fp.l, 0.0, 0.0, 0.0, 0.0)
        traj = plan_quintic(corridor.ref, fp, end, T, self.cfg.dt)
        return PlanResult(KEEP_DECEL, traj, corridor, ego.lane_id,
                          math.inf, "emergency_stop")

    def decide_and_plan(self, snapshot: PlanningSnapshot, ego_id: int,
                        seed: int, iterations: int | None = None) -> PlanResult:
        ranked = self.decide_ranked(snapshot, ego_id, seed, iterations)
        return self.plan(snapshot, ego_id, ranked)
