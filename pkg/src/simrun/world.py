"""Simulation world: vehicle registry, seeded flows, AoI modes, step loop.

Each tick runs a fixed phase order: AoI mode update, replay conflict scan,
external agent exchange, fine-grained decisions (UCT + quintic planning),
coarse lane-following control, pose integration, despawning, and metric
logging. Vehicles are visited in ascending id order inside every phase, and
all randomness flows from the world seed, so identical inputs give
byte-identical logs.
"""

from __future__ import annotations

import json
import math
import time as _time
from bisect import insort
from dataclasses import dataclass, field

import numpy as np

from .behavior import IdmParams, LaneContext, MobilContext, MobilParams, \
    idm_acceleration, mobil_decide
from .errors import DanglingLink, NoRoute
from .frenet import CartesianPose, FrenetPose, cartesian_to_frenet, \
    frenet_to_cartesian
from .geometry import rectangles_overlap
from .planner import CHANGE_LEFT, CHANGE_RIGHT, KEEP_CRUISE, Corridor, \
    PlannerConfig, PlanningSnapshot, PlanVehicle, Prediction, \
    VehiclePlanner, conflict_stop_distance, dead_end_distance, forward_lanes
from .quintic import QuinticPolynomial, Trajectory
from .road_network import RoadNetwork, route

FINE = "Fine"
COARSE = "Coarse"
REPLAY = "Replay"
EXTERNAL = "External"

EGO_ID = 0
END_MARGIN = 0.5  # m before the final lane end that counts as arrival
SHADOW_OFFSET = 1.0  # |l| beyond which a vehicle also occupies the side lane


@dataclass
class AoiConfig:
    radius: float = 50.0
    hysteresis_factor: float = 1.1


@dataclass
class FlowSpec:
    """Seeded Poisson arrivals over a fixed set of routes."""

    routes: list[list[str]]
    vehicles_per_hour: float
    speed: float = 13.89
    speed_jitter: float = 0.1


@dataclass
class WorldConfig:
    dt: float = 0.1
    duration: float = 120.0
    aoi: AoiConfig = field(default_factory=AoiConfig)
    planning: PlannerConfig = field(default_factory=PlannerConfig)
    idm: IdmParams = field(default_factory=IdmParams)
    mobil: MobilParams = field(default_factory=MobilParams)
    coarse_mobil: bool = False
    background_iterations: int | None = None
    perception_radius: float = 60.0
    mandatory_distance: float = 120.0
    change_cooldown: float = 3.0
    blend_duration: float = 3.0
    spawn_gap: float = 10.0
    spawn_s: float = 2.0
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0


@dataclass
class ActiveMotion:
    """A committed trajectory sampled by tick index."""

    traj: Trajectory
    corridor: Corridor
    start_tick: int
    action: str

    def index(self, tick: int) -> int:
        return tick - self.start_tick


@dataclass
class ExternalMotion:
    """Agent-supplied trajectory resampled onto the simulation grid."""

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    start_tick: int

    def index(self, tick: int) -> int:
        return tick - self.start_tick

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class Vehicle:
    vid: int
    length: float
    width: float
    route: list[str]
    route_idx: int
    lane_id: str
    s: float
    l: float
    speed: float
    accel: float
    pose: CartesianPose
    mode: str
    idm: IdmParams
    motion: ActiveMotion | None = None
    external: ExternalMotion | None = None
    lat_poly: QuinticPolynomial | None = None
    lat_start: float = 0.0
    committed_until: float = -1.0
    cooldown_until: float = -1.0
    progress: float = 0.0
    total_route_length: float = 0.0
    jerk: float = 0.0
    lat_acc: float = 0.0
    replay_state: object | None = None

    @property
    def is_ego(self) -> bool:
        return self.vid == EGO_ID


@dataclass
class _FlowState:
    spec: FlowSpec
    rng: np.random.Generator
    next_arrival: float
    pending: list[tuple[int, float]] = field(default_factory=list)


class World:
    """Authoritative single-threaded simulation state."""

    def __init__(self, net: RoadNetwork, cfg: WorldConfig | None = None,
                 seed: int = 0):
        self.net = net
        self.cfg = cfg or WorldConfig()
        self.seed = seed
        self.dt = self.cfg.dt
        self.tick = 0
        self.time = 0.0
        self.vehicles: dict[int, Vehicle] = {}
        self.ego_id: int | None = None
        self.events: list[dict] = []
        self.traj_rows: list[tuple] = []
        self.decision_times: list[float] = []
        self.flows: list[_FlowState] = []
        self.replay = None
        self.external_exchange = None
        self.planner = VehiclePlanner(net, self.cfg.planning)
        self.terminated: str | None = None
        self._next_id = 1
        self._epoch_ticks = max(1, int(round(self.cfg.planning.epoch / self.dt)))

    # ------------------------------------------------------------------
    # Construction

    def log_event(self, kind: str, **payload) -> None:
        self.events.append({"tick": self.tick, "kind": kind, **payload})

    def _route_length_from(self, rte: list[str], lane_id: str,
                           s: float) -> float:
        """Longitudinal meters from (lane_id, s) to the route end.

        Lateral hops advance to a parallel lane, so they only contribute the
        length difference between the two lanes, not a full lane length.
        """
        idx = rte.index(lane_id)
        rem = self.net.lane(lane_id).length - s
        for i in range(idx, len(rte) - 1):
            a, b = rte[i], rte[i + 1]
            if b in self.net.lane(a).successors:
                rem += self.net.lane(b).length
            else:
                rem += self.net.lane(b).length - self.net.lane(a).length
        return max(rem, 0.0)

    def _make_vehicle(self, vid: int, rte: list[str], s: float, speed: float,
                      idm: IdmParams, mode: str) -> Vehicle:
        lane = self.net.lane(rte[0])
        pose = frenet_to_cartesian(lane.center, FrenetPose(s, 0.0, speed))
        v = Vehicle(vid=vid, length=self.cfg.vehicle_length,
                    width=self.cfg.vehicle_width, route=list(rte), route_idx=0,
                    lane_id=rte[0], s=s, l=0.0, speed=speed, accel=0.0,
                    pose=pose, mode=mode, idm=idm)
        v.total_route_length = self._route_length_from(v.route, v.lane_id, s)
        return v

    def add_ego(self, rte: list[str], speed: float | None = None,
                external: bool = False) -> Vehicle:
        v0 = speed if speed is not None else self.cfg.idm.v0 * 0.8
        # mission speed doubles as the ego's desired speed everywhere
        idm = self.cfg.idm.with_v0(v0)
        ego = self._make_vehicle(EGO_ID, rte, self.cfg.spawn_s, v0, idm,
                                 EXTERNAL if external else FINE)
        self.vehicles[EGO_ID] = ego
        self.ego_id = EGO_ID
        self.log_event("spawn", vehicle=EGO_ID, lane=ego.lane_id,
                       s=round(ego.s, 6), ego=True,
                       total=round(ego.total_route_length, 9))
        return ego

    def add_flow(self, spec: FlowSpec) -> None:
        for rte in spec.routes:
            for uid in rte:
                self.net.lane(uid)  # raises DanglingLink on bad config
        rng = np.random.default_rng((self.seed, 97, len(self.flows)))
        headway = 3600.0 / spec.vehicles_per_hour if spec.vehicles_per_hour > 0 \
            else math.inf
        first = float(rng.exponential(headway)) if math.isfinite(headway) \
            else math.inf
        self.flows.append(_FlowState(spec=spec, rng=rng, next_arrival=first))

    def attach_replay(self, manager) -> None:
        self.replay = manager

    # ------------------------------------------------------------------
    # Spawning

    def _entry_blocked(self, lane_id: str, s: float) -> bool:
        for v in self.vehicles.values():
            if v.lane_id == lane_id and abs(v.s - s) < self.cfg.spawn_gap:
                return True
        return False

    def _spawn_pending(self) -> None:
        for fi, flow in enumerate(self.flows):
            spec = flow.spec
            if spec.vehicles_per_hour <= 0:
                continue
            headway = 3600.0 / spec.vehicles_per_hour
            while flow.next_arrival <= self.time:
                ri = int(flow.rng.integers(0, len(spec.routes)))
                jitter = float(flow.rng.uniform(1.0 - spec.speed_jitter,
                                                1.0 + spec.speed_jitter))
                flow.pending.append((ri, spec.speed * jitter))
                flow.next_arrival += float(flow.rng.exponential(headway))
            still = []
            for ri, v0 in flow.pending:
                rte = spec.routes[ri]
                if self._entry_blocked(rte[0], self.cfg.spawn_s):
                    self.log_event("spawn_blocked", flow=fi, lane=rte[0])
                    still.append((ri, v0))
                    continue
                vid = self._next_id
                self._next_id += 1
                veh = self._make_vehicle(vid, rte, self.cfg.spawn_s,
                                         v0 * 0.8, self.cfg.idm.with_v0(v0),
                                         COARSE)
                self.vehicles[vid] = veh
                self.log_event("spawn", vehicle=vid, lane=rte[0],
                               s=round(veh.s, 6), ego=False)
            flow.pending = still

    # ------------------------------------------------------------------
    # Phase 1: AoI

    def update_aoi(self) -> None:
        ego = self.vehicles.get(self.ego_id) if self.ego_id is not None else None
        cfg = self.cfg.aoi
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            if v.is_ego or v.mode in (REPLAY, EXTERNAL):
                continue
            if ego is None:
                if v.mode != COARSE:
                    self._set_mode(v, COARSE)
                continue
            d = math.hypot(v.pose.x - ego.pose.x, v.pose.y - ego.pose.y)
            if v.mode != FINE and d <= cfg.radius:
                self._set_mode(v, FINE)
            elif v.mode == FINE and d > cfg.radius * cfg.hysteresis_factor:
                self._set_mode(v, COARSE)

    def _set_mode(self, v: Vehicle, mode: str) -> None:
        if v.mode != mode:
            self.log_event("mode_change", vehicle=v.vid, frm=v.mode, to=mode)
            v.mode = mode
            if mode == COARSE:
                v.motion = None
                if abs(v.l) > 0.05:
                    self._start_lateral_blend(v)

    def in_aoi(self, v: Vehicle) -> bool:
        ego = self.vehicles.get(self.ego_id) if self.ego_id is not None else None
        if ego is None:
            return False
        d = math.hypot(v.pose.x - ego.pose.x, v.pose.y - ego.pose.y)
        return d <= self.cfg.aoi.radius * self.cfg.aoi.hysteresis_factor

    # ------------------------------------------------------------------
    # Occupancy and contexts

    def occupancy(self) -> dict[str, list[tuple[float, float, int]]]:
        occ: dict[str, list[tuple[float, float, int]]] = {}
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            insort(occ.setdefault(v.lane_id, []), (v.s, v.speed, vid))
            if abs(v.l) > SHADOW_OFFSET:
                lane = self.net.lane(v.lane_id)
                side = lane.left_neighbor if v.l > 0 else lane.right_neighbor
                if side is not None:
                    insort(occ.setdefault(side, []), (v.s, v.speed, vid))
        return occ

    def _forward_chain(self, v: Vehicle, lane_id: str | None = None) -> list[str]:
        lane_id = lane_id or v.lane_id
        idx = v.route.index(lane_id) if lane_id in v.route else -1
        # budget measured from the vehicle, not the lane start
        return forward_lanes(self.net, lane_id, tuple(v.route), idx,
                             v.s + 80.0)

    def _leader_on(self, v: Vehicle, chain: list[str], occ,
                   from_s: float) -> tuple[float, float]:
        offset = 0.0
        for k, uid in enumerate(chain):
            base = -from_s if k == 0 else offset
            for s_w, v_w, wid in occ.get(uid, ()):
                if wid == v.vid:
                    continue
                rel = s_w + base
                if rel > 0.01:
                    other = self.vehicles[wid]
                    gap = rel - 0.5 * (v.length + other.length)
                    return max(gap, 0.01), v_w
            if k == 0:
                offset = self.net.lane(uid).length - from_s
            else:
                offset += self.net.lane(uid).length
            if offset > 80.0:
                break
        return math.inf, 0.0

    def _follower_on(self, v: Vehicle, lane_id: str, occ,
                     at_s: float) -> tuple[float, float]:
        best = None
        for s_w, v_w, wid in reversed(occ.get(lane_id, ())):
            if wid == v.vid:
                continue
            if s_w <= at_s + 0.01:
                other = self.vehicles[wid]
                gap = (at_s - s_w) - 0.5 * (v.length + other.length)
                best = (max(gap, 0.01), v_w)
                break
        if best is None:
            lane = self.net.lane(lane_id)
            for pred in lane.predecessors:
                plen = self.net.lane(pred).length
                for s_w, v_w, wid in reversed(occ.get(pred, ())):
                    if wid == v.vid:
                        continue
                    other = self.vehicles[wid]
                    gap = (at_s + plen - s_w) - 0.5 * (v.length + other.length)
                    cand = (max(gap, 0.01), v_w)
                    if best is None or cand[0] < best[0]:
                        best = cand
                    break
        return best if best is not None else (math.inf, 0.0)

    def _coarse_accel(self, v: Vehicle, occ) -> float:
        chain = self._forward_chain(v)
        gap, v_lead = self._leader_on(v, chain, occ, v.s)
        stop = conflict_stop_distance(
            self.net, v.vid, v.lane_id, v.s, v.speed,
            lambda uid: occ.get(uid, ()),
            next_lane=chain[1] if len(chain) > 1 else None)
        dead = None
        if v.lane_id in v.route:
            dead = dead_end_distance(self.net, v.lane_id, v.s,
                                     tuple(v.route), v.route.index(v.lane_id))
        for extra in (stop, dead):
            if extra is not None:
                virtual = max(extra, 0.3)
                if virtual < gap:
                    gap, v_lead = virtual, 0.0
        return idm_acceleration(v.speed, gap, v.speed - v_lead, v.idm)

    # ------------------------------------------------------------------
    # Phase 4: fine decisions

    def _committed_track(self, v: Vehicle, n: int) -> Prediction | None:
        """Read back a vehicle's committed samples on the planning grid.

        Extends past the trajectory end at constant speed along the final
        heading; None when the vehicle is not following a stored track.
        """
        if v.motion is not None:
            t = v.motion.traj
            i = v.motion.index(self.tick)
            src_x, src_y, src_h = t.x, t.y, t.heading
            v_end, h_end = float(t.speed[-1]), float(t.heading[-1])
        elif v.external is not None:
            m = v.external
            i = m.index(self.tick)
            src_x, src_y, src_h = m.x, m.y, m.heading
            v_end, h_end = float(m.speed[-1]), float(m.heading[-1])
        else:
            return None
        if i < 0 or i >= len(src_x):
            return None
        xs, ys, hs = src_x[i:i + n], src_y[i:i + n], src_h[i:i + n]
        k = n - len(xs)
        if k > 0:
            steps = np.arange(1, k + 1, dtype=float) * self.dt
            xs = np.concatenate([xs, xs[-1] + v_end * math.cos(h_end) * steps])
            ys = np.concatenate([ys, ys[-1] + v_end * math.sin(h_end) * steps])
            hs = np.concatenate([hs, np.full(k, h_end)])
        return Prediction(xs, ys, hs, v.length, v.width)

    def _snapshot_around(self, center: Vehicle) -> PlanningSnapshot:
        r = self.cfg.perception_radius
        p = self.cfg.planning
        n = int(round(p.horizon / p.dt)) + 1
        vehicles = {}
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            d = math.hypot(v.pose.x - center.pose.x, v.pose.y - center.pose.y)
            if d <= r or vid == center.vid:
                committed = None if vid == center.vid \
                    else self._committed_track(v, n)
                vehicles[vid] = PlanVehicle(
                    vid=vid, lane_id=v.lane_id, s=v.s, l=v.l, speed=v.speed,
                    accel=v.accel, length=v.length, width=v.width,
                    route=tuple(v.route), route_idx=v.route_idx, idm=v.idm,
                    pose=v.pose, committed=committed)
        return PlanningSnapshot(net=self.net, vehicles=vehicles,
                                time=self.time)

    def _decision_seed(self, vid: int) -> int:
        return ((self.seed * 1000003 + vid) * 1000003 + self.tick) % (2 ** 63)

    def _apply_plan(self, v: Vehicle, res) -> None:
        v.motion = ActiveMotion(res.trajectory, res.corridor, self.tick,
                                res.action)
        v.external = None
        if res.base_lane != v.lane_id:
            dest = v.route[-1]
            v.lane_id = res.base_lane
            try:
                v.route = list(route(self.net, res.base_lane, dest))
            except NoRoute:
                v.route = [res.base_lane]
            v.route_idx = 0
            v.committed_until = self.time + self.cfg.planning.change_duration
            v.cooldown_until = v.committed_until + self.cfg.change_cooldown
        fp = res.trajectory.state_at(0.0)
        v.s = res.corridor.locate(fp.s)[1]
        v.l = fp.l

    def _fine_decisions(self) -> None:
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            if v.mode != FINE:
                continue
            if (self.tick + vid) % self._epoch_ticks != 0:
                continue
            if self.time < v.committed_until:
                continue
            snap = self._snapshot_around(v)
            iters = None if v.is_ego else self.cfg.background_iterations
            t0 = _time.perf_counter()
            res = self.planner.decide_and_plan(snap, vid,
                                               self._decision_seed(vid), iters)
            elapsed = _time.perf_counter() - t0
            if v.is_ego:
                self.decision_times.append(elapsed)
                self.log_event("decision", vehicle=vid, action=res.action)
            if res.fallback is not None:
                self.log_event("planner_fallback", vehicle=vid,
                               requested=res.action, reason=res.fallback)
            self._apply_plan(v, res)

    # ------------------------------------------------------------------
    # Phase 5: coarse control

    def _lane_context(self, v: Vehicle, lane_id: str, occ) -> LaneContext:
        chain = self._forward_chain(v, lane_id)
        lg, lv = self._leader_on(v, chain, occ, v.s)
        fg, fv = self._follower_on(v, lane_id, occ, v.s)
        return LaneContext(leader_gap=lg, leader_speed=lv,
                           follower_gap=fg, follower_speed=fv)

    def _mandatory_side(self, v: Vehicle) -> str | None:
        if v.lane_id not in v.route:
            return None
        idx = v.route.index(v.lane_id)
        dist = dead_end_distance(self.net, v.lane_id, v.s, tuple(v.route), idx)
        if dist is None or dist > self.cfg.mandatory_distance:
            return None
        lane = self.net.lane(v.lane_id)
        target = v.route[idx + 1]
        if target == lane.left_neighbor:
            return "left"
        if target == lane.right_neighbor:
            return "right"
        return None

    def _coarse_change(self, v: Vehicle, side: str) -> None:
        lane = self.net.lane(v.lane_id)
        target = lane.left_neighbor if side == "left" else lane.right_neighbor
        fp = cartesian_to_frenet(self.net.lane(target).center, v.pose)
        v.lane_id = target
        v.s = min(max(fp.s, 0.0), self.net.lane(target).length)
        v.l = fp.l
        if target not in v.route:
            dest = v.route[-1]
            try:
                v.route = list(route(self.net, target, dest))
                v.route_idx = 0
            except NoRoute:
                v.route = [target]
                v.route_idx = 0
        else:
            v.route_idx = v.route.index(target)
        self._start_lateral_blend(v)
        v.cooldown_until = self.time + self.cfg.blend_duration \
            + self.cfg.change_cooldown

    def _start_lateral_blend(self, v: Vehicle) -> None:
        v.lat_poly = QuinticPolynomial(v.l, 0.0, 0.0, 0.0, 0.0, 0.0,
                                       self.cfg.blend_duration)
        v.lat_start = self.time

    def _maybe_coarse_mobil(self, v: Vehicle, occ) -> None:
        if self.time < v.cooldown_until or v.lat_poly is not None:
            return
        lane = self.net.lane(v.lane_id)
        mandatory = self._mandatory_side(v)
        if mandatory is not None:
            target = lane.left_neighbor if mandatory == "left" \
                else lane.right_neighbor
            if target is None:
                return
            side_ctx = self._lane_context(v, target, occ)
            safe_follow = True
            if not math.isinf(side_ctx.follower_gap):
                a_f = idm_acceleration(
                    side_ctx.follower_speed, side_ctx.follower_gap,
                    side_ctx.follower_speed - v.speed, self.cfg.idm)
                safe_follow = a_f >= -self.cfg.mobil.b_safe
            if side_ctx.leader_gap > 1.0 and safe_follow:
                self._coarse_change(v, mandatory)
            return
        if not self.cfg.coarse_mobil:
            return
        lc = self._lane_context(v, v.lane_id, occ)
        dest = v.route[-1]
        left = right = None
        if lane.left_neighbor and lane.change_permission in ("left", "both") \
                and self.planner.reachable(lane.left_neighbor, dest, v.s):
            left = self._lane_context(v, lane.left_neighbor, occ)
        if lane.right_neighbor and lane.change_permission in ("right", "both") \
                and self.planner.reachable(lane.right_neighbor, dest, v.s):
            right = self._lane_context(v, lane.right_neighbor, occ)
        ctx = MobilContext(ego_speed=v.speed, ego_length=v.length,
                           current=lc, left=left, right=right)
        verdict = mobil_decide(ctx, v.idm, self.cfg.mobil)
        if verdict == "change_left":
            self._coarse_change(v, "left")
        elif verdict == "change_right":
            self._coarse_change(v, "right")

    # ------------------------------------------------------------------
    # Phase 6: integration

    def _advance_route(self, v: Vehicle) -> bool:
        """Roll lane-end crossings onto the next lane. True when route done."""
        while True:
            lane_len = self.net.lane(v.lane_id).length
            if v.s < lane_len:
                return False
            if v.lane_id == v.route[-1]:
                return True
            chain = self._forward_chain(v)
            if len(chain) < 2:
                v.s = lane_len - 0.05
                v.speed = 0.0
                return False
            v.s -= lane_len
            v.lane_id = chain[1]
            if v.lane_id in v.route:
                v.route_idx = v.route.index(v.lane_id)

    def _integrate_coarse(self, v: Vehicle, accel: float) -> bool:
        v_prev_a = v.accel
        v.accel = accel
        v.jerk = (accel - v_prev_a) / self.dt
        v.speed = max(0.0, v.speed + accel * self.dt)
        v.s += v.speed * self.dt
        v.progress += v.speed * self.dt
        done = self._advance_route(v)
        if done:
            return True
        l = 0.0
        l_dot = 0.0
        if v.lat_poly is not None:
            bt = self.time + self.dt - v.lat_start
            if bt >= self.cfg.blend_duration:
                v.lat_poly = None
            else:
                l = float(v.lat_poly.pos(bt))
                l_dot = float(v.lat_poly.vel(bt))
        v.l = l
        lane = self.net.lane(v.lane_id)
        s_clamped = min(v.s, lane.length)
        l_prime = l_dot / v.speed if v.speed > 0.1 else 0.0
        v.pose = frenet_to_cartesian(
            lane.center, FrenetPose(s_clamped, l, v.speed, l_prime, v.accel))
        kappa = lane.center.curvature_at(s_clamped)
        v.lat_acc = v.speed ** 2 * kappa
        return False

    def _integrate_motion(self, v: Vehicle) -> bool:
        m = v.motion
        i = m.index(self.tick + 1)
        if i >= len(m.traj):
            v.motion = None
            occ = self._occ_cache
            return self._integrate_coarse(v, self._coarse_accel(v, occ))
        t = m.traj
        v.pose = CartesianPose(float(t.x[i]), float(t.y[i]),
                               float(t.heading[i]), float(t.speed[i]),
                               float(t.accel[i]))
        ds = float(t.s[i]) - float(t.s[max(i - 1, 0)])
        v.progress += max(ds, 0.0)
        v.speed = float(t.speed[i])
        v.accel = float(t.accel[i])
        v.jerk = float(t.jerk[i])
        lane_uid, local = m.corridor.locate(float(t.s[i]))
        v.lane_id = lane_uid
        v.s = local
        v.l = float(t.l[i])
        if lane_uid in v.route:
            v.route_idx = v.route.index(lane_uid)
        kappa = self.net.lane(lane_uid).center.curvature_at(
            min(local, self.net.lane(lane_uid).length))
        v.lat_acc = v.speed ** 2 * kappa
        final = self.net.lane(v.route[-1])
        if v.lane_id == v.route[-1] and v.s >= final.length - END_MARGIN:
            return True
        if v.s >= self.net.lane(v.lane_id).length and lane_uid == m.corridor.lanes[-1]:
            return self._advance_route(v)
        return False

    def _integrate_external(self, v: Vehicle) -> bool:
        m = v.external
        i = m.index(self.tick + 1)
        if i >= len(m):
            v.external = None
            occ = self._occ_cache
            return self._integrate_coarse(v, self._coarse_accel(v, occ))
        prev = v.pose
        v.pose = CartesianPose(float(m.x[i]), float(m.y[i]),
                               float(m.heading[i]), float(m.speed[i]), 0.0)
        new_speed = float(m.speed[i])
        a = (new_speed - v.speed) / self.dt
        v.jerk = (a - v.accel) / self.dt
        v.accel = a
        v.speed = new_speed
        v.progress += math.hypot(v.pose.x - prev.x, v.pose.y - prev.y)
        self._assign_lane(v)
        final = self.net.lane(v.route[-1])
        if v.lane_id == v.route[-1] and v.s >= final.length - END_MARGIN:
            return True
        return False

    def _assign_lane(self, v: Vehicle) -> None:
        candidates = [v.lane_id]
        lane = self.net.lane(v.lane_id)
        candidates += lane.successors
        for side in (lane.left_neighbor, lane.right_neighbor):
            if side:
                candidates.append(side)
        best = None
        for uid in candidates:
            try:
                fp = cartesian_to_frenet(self.net.lane(uid).center, v.pose,
                                         corridor_half_width=6.0)
            except Exception:
                continue
            if best is None or abs(fp.l) < abs(best[1].l):
                best = (uid, fp)
        if best is None:
            for uid in sorted(self.net.lanes):
                try:
                    fp = cartesian_to_frenet(self.net.lane(uid).center, v.pose,
                                             corridor_half_width=4.0)
                except Exception:
                    continue
                if best is None or abs(fp.l) < abs(best[1].l):
                    best = (uid, fp)
        if best is not None:
            v.lane_id, fp = best
            v.s = min(max(fp.s, 0.0), self.net.lane(v.lane_id).length)
            v.l = fp.l
            if v.lane_id in v.route:
                v.route_idx = v.route.index(v.lane_id)
            kappa = self.net.lane(v.lane_id).center.curvature_at(v.s)
            v.lat_acc = v.speed ** 2 * kappa

    # ------------------------------------------------------------------
    # Phase 7: collisions and despawn

    def _check_collisions(self) -> list[tuple[int, int]]:
        rows = []
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            r = 0.5 * math.hypot(v.length, v.width)
            rows.append((v.pose.x - r, v.pose.x + r, vid))
        rows.sort()
        hits = []
        active: list[tuple[float, int]] = []
        for x0, x1, vid in rows:
            active = [(ax1, avid) for ax1, avid in active if ax1 >= x0]
            v = self.vehicles[vid]
            for _, avid in active:
                w = self.vehicles[avid]
                if rectangles_overlap(
                        (v.pose.x, v.pose.y, v.pose.heading, v.length, v.width),
                        (w.pose.x, w.pose.y, w.pose.heading, w.length, w.width)):
                    hits.append((min(vid, avid), max(vid, avid)))
            active.append((x1, vid))
        return sorted(set(hits))

    # ------------------------------------------------------------------
    # Phase 8: logging

    def _ego_ttc(self) -> float | None:
        ego = self.vehicles.get(self.ego_id)
        if ego is None:
            return None
        from .replay import constant_velocity_ttc
        best = None
        ex, ey = ego.pose.x, ego.pose.y
        evx = ego.speed * math.cos(ego.pose.heading)
        evy = ego.speed * math.sin(ego.pose.heading)
        for vid in sorted(self.vehicles):
            if vid == ego.vid:
                continue
            w = self.vehicles[vid]
            d = math.hypot(w.pose.x - ex, w.pose.y - ey)
            if d > self.cfg.aoi.radius:
                continue
            wvx = w.speed * math.cos(w.pose.heading)
            wvy = w.speed * math.sin(w.pose.heading)
            radius = 0.5 * (math.hypot(ego.length, ego.width)
                            + math.hypot(w.length, w.width))
            ttc = constant_velocity_ttc(w.pose.x - ex, w.pose.y - ey,
                                        wvx - evx, wvy - evy, radius, 5.0)
            if ttc is not None and (best is None or ttc < best):
                best = ttc
        return best

    def _log_tick(self) -> None:
        t = round(self.time, 6)
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            self.traj_rows.append((vid, t, v.pose.x, v.pose.y,
                                   v.pose.heading, v.speed))
        ego = self.vehicles.get(self.ego_id)
        if ego is not None:
            lane = self.net.lane(ego.lane_id)
            remaining = self._route_length_from(ego.route, ego.lane_id, ego.s) \
                if ego.lane_id in ego.route else 0.0
            ttc = self._ego_ttc()
            self.log_event("metric_sample", v=round(ego.speed, 9),
                           limit=round(lane.speed_limit, 9),
                           jerk=round(ego.jerk, 9),
                           lat_acc=round(ego.lat_acc, 9),
                           ttc=None if ttc is None else round(ttc, 9),
                           remaining=round(remaining, 9))

    # ------------------------------------------------------------------

    def step(self) -> None:
        if self.terminated:
            return
        self._spawn_pending()
        if self.replay is not None:
            self.replay.spawn_due(self)
        self.update_aoi()
        if self.replay is not None:
            self.replay.scan(self)
        if (self.external_exchange is not None and self.ego_id is not None
                and self.vehicles.get(self.ego_id) is not None
                and self.vehicles[self.ego_id].mode == EXTERNAL
                and self.tick % self._epoch_ticks == 0):
            self._external_epoch()
            if self.terminated:
                return
        self._fine_decisions()
        self._occ_cache = self.occupancy()
        coarse_accels: dict[int, float] = {}
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            if v.mode == COARSE:
                self._maybe_coarse_mobil(v, self._occ_cache)
                coarse_accels[vid] = self._coarse_accel(v, self._occ_cache)
            elif v.mode == REPLAY and v.replay_state.overridden \
                    and v.motion is None:
                coarse_accels[vid] = self._coarse_accel(v, self._occ_cache)
            elif v.mode in (FINE, EXTERNAL) and v.motion is None \
                    and v.external is None:
                coarse_accels[vid] = self._coarse_accel(v, self._occ_cache)
        finished: list[int] = []
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            done = False
            if v.mode == REPLAY and not v.replay_state.overridden:
                done = self.replay.follow(self, v)
            elif v.motion is not None:
                done = self._integrate_motion(v)
            elif v.external is not None:
                done = self._integrate_external(v)
            elif vid in coarse_accels:
                done = self._integrate_coarse(v, coarse_accels[vid])
            if done:
                finished.append(vid)
        for vid in finished:
            v = self.vehicles.pop(vid)
            self.log_event("despawn", vehicle=vid, reason="route_end")
            if v.is_ego:
                self.terminated = "route_end"
        for a, b in self._check_collisions():
            if a not in self.vehicles or b not in self.vehicles:
                continue
            self.log_event("collision", a=a, b=b)
            if a == self.ego_id or b == self.ego_id:
                self.terminated = "collision"
            else:
                for vid in (a, b):
                    self.vehicles.pop(vid, None)
                    self.log_event("despawn", vehicle=vid, reason="collision")
        self.tick += 1
        self.time = self.tick * self.dt
        self._log_tick()

    def run(self, duration: float | None = None) -> str:
        duration = duration if duration is not None else self.cfg.duration
        max_ticks = int(round(duration / self.dt))
        while self.tick < max_ticks and not self.terminated:
            self.step()
        if not self.terminated:
            self.terminated = "timeout"
        self.log_event("end", reason=self.terminated)
        return self.terminated

    # ------------------------------------------------------------------
    # External control

    def _external_epoch(self) -> None:
        from .protocol import build_observation
        ego = self.vehicles[self.ego_id]
        obs = build_observation(self)
        try:
            outcome = self.external_exchange(obs)
        except Exception as exc:
            from .errors import ConnectionClosed
            if isinstance(exc, ConnectionClosed):
                self.terminated = "agent_disconnected"
                return
            raise
        kind = outcome[0]
        if kind == "fallback":
            self.log_event("agent_fallback", reason=outcome[1])
            ego.motion = None
            ego.external = None
            return
        action = outcome[1]
        self.decision_times.append(outcome[2])
        if action.meta_action is not None:
            snap = self._snapshot_around(ego)
            res = self.planner.plan(snap, ego.vid, [action.meta_action])
            self.log_event("decision", vehicle=ego.vid, action=res.action)
            if res.fallback is not None:
                self.log_event("planner_fallback", vehicle=ego.vid,
                               requested=res.action, reason=res.fallback)
            self._apply_plan(ego, res)
        else:
            xs, ys, hs, vs = action.resample(self.dt, ego.pose)
            ego.external = ExternalMotion(xs, ys, hs, vs, self.tick)
            ego.motion = None
            self.log_event("decision", vehicle=ego.vid, action="trajectory")


def spawn_flow(world: World, spec: FlowSpec) -> None:
    """Register a seeded flow; arrivals draw from the world seed."""
    world.add_flow(spec)


def update_aoi(world: World) -> None:
    world.update_aoi()
