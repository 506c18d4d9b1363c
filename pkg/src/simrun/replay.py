"""Log-driven vehicles: follow recorded tracks, override on conflicts.

A replay vehicle normally holds the interpolated log pose exactly. Inside
the AoI a constant-velocity projection screens for upcoming footprint
overlaps; a projected time-to-collision under the threshold hands the
vehicle to live IDM control, and once the conflict clears it blends back
onto the time-aligned log pose.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import BadLog
from .frenet import CartesianPose, FrenetPose, cartesian_to_frenet
from .geometry import normalize_angle
from .planner import build_corridor
from .quintic import plan_quintic

REPLAY_COLUMNS = ["vehicle_id", "t", "x", "y", "heading", "speed"]


@dataclass
class ReplayConfig:
    ttc_threshold: float = 3.0
    horizon: float = 5.0
    max_deviation: float = 2.0
    conflict_clear: float = 3.0
    blend_duration: float = 2.0


def constant_velocity_ttc(dx: float, dy: float, dvx: float, dvy: float,
                          radius: float, horizon: float) -> float | None:
    """Earliest time two constant-velocity discs touch, None if never.

    Relative position (dx, dy) and velocity (dvx, dvy); radius is the sum of
    the two disc radii. Already-overlapping discs return 0.
    """
    c = dx * dx + dy * dy - radius * radius
    if c <= 0.0:
        return 0.0
    a = dvx * dvx + dvy * dvy
    b = 2.0 * (dx * dvx + dy * dvy)
    if a < 1e-12:
        return None
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    t = (-b - math.sqrt(disc)) / (2.0 * a)
    if 0.0 < t <= horizon:
        return t
    return None


@dataclass
class ReplayTrack:
    """One vehicle's recorded samples, linearly interpolated."""

    source_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        if len(self.t) == 0:
            raise BadLog("empty replay track")
        if np.any(np.diff(self.t) <= 0):
            raise BadLog(
                f"track {self.source_id}: timestamps not strictly increasing")

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def pose_at(self, time: float) -> CartesianPose:
        ts = self.t
        if time <= ts[0]:
            i, alpha = 0, 0.0
        elif time >= ts[-1]:
            i, alpha = len(ts) - 2, 1.0
        else:
            i = bisect_right(ts, time) - 1
            alpha = (time - ts[i]) / (ts[i + 1] - ts[i])
        if len(ts) == 1:
            return CartesianPose(float(self.x[0]), float(self.y[0]),
                                 float(self.heading[0]), float(self.speed[0]))
        x = float(self.x[i] + alpha * (self.x[i + 1] - self.x[i]))
        y = float(self.y[i] + alpha * (self.y[i + 1] - self.y[i]))
        h0 = float(self.heading[i])
        dh = normalize_angle(float(self.heading[i + 1]) - h0)
        v = float(self.speed[i] + alpha * (self.speed[i + 1] - self.speed[i]))
        return CartesianPose(x, y, normalize_angle(h0 + alpha * dh), v)


def load_tracks(path) -> list[ReplayTrack]:
    """Read replay tracks from a trajectory CSV (header row required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BadLog("replay file is empty") from None
        if header != REPLAY_COLUMNS:
            raise BadLog(f"replay header {header!r}, "
                         f"expected {REPLAY_COLUMNS!r}")
        rows: dict[int, list[tuple[float, ...]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(REPLAY_COLUMNS):
                raise BadLog(f"line {lineno}: expected "
                             f"{len(REPLAY_COLUMNS)} fields")
            try:
                vid = int(row[0])
                vals = tuple(float(c) for c in row[1:])
            except ValueError as exc:
                raise BadLog(f"line {lineno}: {exc}") from None
            rows.setdefault(vid, []).append(vals)
    tracks = []
    for vid in sorted(rows):
        data = sorted(rows[vid])
        arr = np.asarray(data)
        tracks.append(ReplayTrack(source_id=vid, t=arr[:, 0], x=arr[:, 1],
                                  y=arr[:, 2], heading=arr[:, 3],
                                  speed=arr[:, 4]))
    return tracks


@dataclass
class OverrideState:
    track: ReplayTrack
    overridden: bool = False
    since: float = 0.0
    reason: str = ""
    deviation: float = 0.0
    last_conflict: float = field(default=-1e9)


def detect_conflict(world, vehicle, cfg: ReplayConfig):
    """Constant-velocity screening against every other AoI vehicle."""
    best = None
    vx = vehicle.speed * math.cos(vehicle.pose.heading)
    vy = vehicle.speed * math.sin(vehicle.pose.heading)
    for wid in sorted(world.vehicles):
        if wid == vehicle.vid:
            continue
        w = world.vehicles[wid]
        if not world.in_aoi(w):
            continue
        wvx = w.speed * math.cos(w.pose.heading)
        wvy = w.speed * math.sin(w.pose.heading)
        radius = 0.5 * (math.hypot(vehicle.length, vehicle.width)
                        + math.hypot(w.length, w.width))
        ttc = constant_velocity_ttc(
            w.pose.x - vehicle.pose.x, w.pose.y - vehicle.pose.y,
            wvx - vx, wvy - vy, radius, cfg.horizon)
        if ttc is None or ttc >= cfg.ttc_threshold:
            continue
        if best is None or ttc < best["ttc"]:
            reason = "footprint_overlap" if ttc <= world.dt else "rear_end_ttc"
            best = {"reason": reason, "ttc": ttc, "other": wid}
    return best


class ReplayManager:
    """Owns replay tracks and drives their vehicles inside the world."""

    def __init__(self, tracks: list[ReplayTrack],
                 cfg: ReplayConfig | None = None):
        self.cfg = cfg or ReplayConfig()
        self._pending = sorted(tracks, key=lambda tr: (tr.t_start,
                                                       tr.source_id))
        self.id_map: dict[int, int] = {}

    # -- lifecycle --

    def spawn_due(self, world) -> None:
        while self._pending and self._pending[0].t_start <= world.time:
            track = self._pending.pop(0)
            pose = track.pose_at(world.time)
            placed = self._project(world, pose)
            if placed is None:
                world.log_event("spawn_blocked", source=track.source_id,
                                reason="off_map")
                continue
            lane_id, s, l = placed
            vid = world._next_id
            world._next_id += 1
            from .world import REPLAY, Vehicle
            v = Vehicle(vid=vid, length=world.cfg.vehicle_length,
                        width=world.cfg.vehicle_width, route=[lane_id],
                        route_idx=0, lane_id=lane_id, s=s, l=l,
                        speed=pose.speed, accel=0.0, pose=pose, mode=REPLAY,
                        idm=world.cfg.idm,
                        replay_state=OverrideState(track=track))
            world.vehicles[vid] = v
            self.id_map[track.source_id] = vid
            world.log_event("spawn", vehicle=vid, lane=lane_id,
                            s=round(s, 6), ego=False, source=track.source_id)

    def _project(self, world, pose: CartesianPose):
        best = None
        for uid in sorted(world.net.lanes):
            try:
                fp = cartesian_to_frenet(world.net.lane(uid).center, pose,
                                         corridor_half_width=4.0)
            except Exception:
                continue
            if best is None or abs(fp.l) < abs(best[2]):
                best = (uid, fp.s, fp.l)
        return best

    # -- per-tick --

    def scan(self, world) -> None:
        for vid in sorted(world.vehicles):
            v = world.vehicles[vid]
            if v.replay_state is None:
                continue
            st: OverrideState = v.replay_state
            inside = world.in_aoi(v)
            conflict = detect_conflict(world, v, self.cfg) if inside else None
            if conflict is not None:
                st.last_conflict = world.time
            if not st.overridden:
                if conflict is not None:
                    st.overridden = True
                    st.since = world.time
                    st.reason = conflict["reason"]
                    v.motion = None
                    log_speed = st.track.pose_at(world.time).speed
                    v.idm = v.idm.with_v0(max(log_speed, 2.0))
                    world.log_event("override_on", vehicle=vid,
                                    reason=conflict["reason"],
                                    ttc=round(conflict["ttc"], 9),
                                    other=conflict["other"])
                continue
            # overridden: measure deviation from the time-aligned log pose
            if v.lane_id not in v.route:
                v.route = [v.lane_id]
                v.route_idx = 0
            if world.time > st.track.t_end:
                continue  # log gap: stay overridden to route end
            target = st.track.pose_at(world.time)
            st.deviation = math.hypot(v.pose.x - target.x,
                                      v.pose.y - target.y)
            clear_for = world.time - st.last_conflict
            if clear_for < self.cfg.conflict_clear:
                v.motion = None  # abandon any restore blend mid-flight
                continue
            if st.deviation <= self.cfg.max_deviation:
                st.overridden = False
                v.motion = None
                world.log_event("override_off", vehicle=vid,
                                deviation=round(st.deviation, 9))
            elif v.motion is None:
                self._start_blend(world, v, st)

    def _start_blend(self, world, v, st: OverrideState) -> None:
        from .world import ActiveMotion
        t_target = min(world.time + self.cfg.blend_duration, st.track.t_end)
        duration = t_target - world.time
        steps = int(round(duration / world.dt))
        if steps < 2:
            return
        duration = steps * world.dt
        chain = world._forward_chain(v)
        corridor = build_corridor(world.net, chain)
        try:
            fp0 = cartesian_to_frenet(corridor.ref, v.pose)
            goal = st.track.pose_at(world.time + duration)
            fp1 = cartesian_to_frenet(corridor.ref, goal)
        except Exception:
            return
        end = FrenetPose(fp1.s, fp1.l, max(goal.speed, 0.0), 0.0, 0.0, 0.0)
        traj = plan_quintic(corridor.ref, fp0, end, duration, world.dt)
        v.motion = ActiveMotion(traj, corridor, world.tick, "restore_blend")

    def follow(self, world, v) -> bool:
        """Advance a Following vehicle to the next tick's log pose."""
        st: OverrideState = v.replay_state
        t_next = world.time + world.dt
        if t_next > st.track.t_end:
            return True
        pose = st.track.pose_at(t_next)
        a = (pose.speed - v.speed) / world.dt
        v.jerk = (a - v.accel) / world.dt
        v.accel = a
        v.speed = pose.speed
        v.pose = pose
        world._assign_lane(v)
        v.route = [v.lane_id]
        v.route_idx = 0
        return False
