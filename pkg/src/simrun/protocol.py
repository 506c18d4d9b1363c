"""Wire protocol for external ego control: NDJSON over a local socket.

The engine is the server. Each message is one JSON object per line with a
two-field envelope {"type", "payload"}. After a version handshake the loop
is strict request/response: one observation out, one action back, with the
simulation clock frozen while waiting. A late reply is matched to the
observation it answers, so a slow agent costs one fallback per missed
epoch instead of shifting every subsequent action by one.
"""

from __future__ import annotations

import json
import math
import socket
import time as _time
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMessage,
    BadTrajectory,
    ConnectionClosed,
    NoEgo,
    ProtocolViolation,
    UnknownMetaAction,
)
from .frenet import CartesianPose
from .planner import META_ACTIONS

PROTOCOL_VERSION = "1"
DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 7766
DEFAULT_TIMEOUT = 30.0
OBSERVATION_NEIGHBORS = 8
TRAJECTORY_HORIZON = 5.0

MESSAGE_TYPES = ("hello", "observation", "action", "bye")
_POINT_KEYS = ("t", "x", "y", "speed")


def encode_message(mtype: str, payload: dict) -> bytes:
    return (json.dumps({"type": mtype, "payload": payload},
                       separators=(",", ":")) + "\n").encode()


def decode_message(line: bytes) -> tuple[str, dict]:
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadMessage(f"not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"type", "payload"}:
        raise BadMessage("envelope must be {type, payload}")
    if obj["type"] not in MESSAGE_TYPES:
        raise BadMessage(f"unknown message type {obj['type']!r}")
    if not isinstance(obj["payload"], dict):
        raise BadMessage("payload must be an object")
    return obj["type"], obj["payload"]


def _number(val) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)) \
            or not math.isfinite(val):
        raise BadMessage(f"expected a finite number, got {val!r}")
    return float(val)


@dataclass
class AgentAction:
    """Exactly one of a meta-action name or an explicit trajectory."""

    meta_action: str | None = None
    trajectory: list[tuple[float, float, float, float]] | None = None

    def to_payload(self) -> dict:
        if self.meta_action is not None:
            return {"meta_action": self.meta_action}
        return {"trajectory": [{"t": t, "x": x, "y": y, "speed": v}
                               for t, x, y, v in self.trajectory]}

    def resample(self, dt: float, pose: CartesianPose):
        """Linear resample onto the tick grid, index 0 at the current tick."""
        pts = list(self.trajectory)
        if pts[0][0] > 1e-12:
            pts.insert(0, (0.0, pose.x, pose.y, pose.speed))
        knots = np.array([p[0] for p in pts])
        n = int(math.floor(pts[-1][0] / dt + 1e-9))
        grid = np.arange(n + 1) * dt
        xs = np.interp(grid, knots, [p[1] for p in pts])
        ys = np.interp(grid, knots, [p[2] for p in pts])
        vs = np.interp(grid, knots, [p[3] for p in pts])
        hs = np.empty_like(xs)
        prev = pose.heading
        for i in range(len(xs)):
            j = min(i, len(xs) - 2)
            dx = xs[j + 1] - xs[j] if len(xs) > 1 else 0.0
            dy = ys[j + 1] - ys[j] if len(xs) > 1 else 0.0
            if math.hypot(dx, dy) > 1e-6:
                prev = math.atan2(dy, dx)
            hs[i] = prev
        return xs, ys, hs, vs


def parse_action(data) -> AgentAction:
    """Validate an action payload (bytes, str, or parsed dict)."""
    if isinstance(data, (bytes, bytearray, str)):
        try:
            obj = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BadMessage(f"not valid JSON: {exc}") from None
    else:
        obj = data
    if not isinstance(obj, dict):
        raise BadMessage("action payload must be an object")
    if set(obj) == {"meta_action"}:
        name = obj["meta_action"]
        if not isinstance(name, str):
            raise BadMessage("meta_action must be a string")
        if name not in META_ACTIONS:
            raise UnknownMetaAction(name)
        return AgentAction(meta_action=name)
    if set(obj) == {"trajectory"}:
        rows = obj["trajectory"]
        if not isinstance(rows, list):
            raise BadMessage("trajectory must be a list")
        if not rows:
            raise BadTrajectory("trajectory is empty")
        pts = []
        for row in rows:
            if not isinstance(row, dict) or set(row) != set(_POINT_KEYS):
                raise BadMessage(f"trajectory points need keys {_POINT_KEYS}")
            pts.append(tuple(_number(row[k]) for k in _POINT_KEYS))
        if pts[0][0] < 0.0:
            raise BadTrajectory("first timestamp must be >= 0")
        for a, b in zip(pts, pts[1:]):
            if b[0] <= a[0]:
                raise BadTrajectory("timestamps must be strictly increasing")
        if pts[-1][0] > TRAJECTORY_HORIZON + 1e-9:
            raise BadTrajectory(
                f"horizon {pts[-1][0]:.3f} s exceeds {TRAJECTORY_HORIZON} s")
        return AgentAction(trajectory=pts)
    raise BadMessage("exactly one of meta_action / trajectory required")


def build_observation(world) -> dict:
    """Serialize the frozen world snapshot around the ego."""
    ego = world.vehicles.get(world.ego_id) if world.ego_id is not None \
        else None
    if ego is None:
        raise NoEgo("no ego vehicle to observe")
    remaining = world._route_length_from(ego.route, ego.lane_id, ego.s) \
        if ego.lane_id in ego.route else 0.0
    total = ego.total_route_length
    completion = 1.0 if total <= 0 else max(0.0, min(1.0,
                                                     1.0 - remaining / total))
    near = []
    for vid in sorted(world.vehicles):
        if vid == ego.vid:
            continue
        w = world.vehicles[vid]
        d = math.hypot(w.pose.x - ego.pose.x, w.pose.y - ego.pose.y)
        if d <= world.cfg.aoi.radius:
            near.append((d, vid, w))
    near.sort(key=lambda r: (r[0], r[1]))
    neighbors = [{
        "id": vid,
        "distance": d,
        "dx": w.pose.x - ego.pose.x,
        "dy": w.pose.y - ego.pose.y,
        "x": w.pose.x,
        "y": w.pose.y,
        "heading": w.pose.heading,
        "speed": w.speed,
        "lane": w.lane_id,
        "s": w.s,
        "l": w.l,
        "length": w.length,
        "width": w.width,
    } for d, vid, w in near[:OBSERVATION_NEIGHBORS]]

    def side(uid):
        if uid is None:
            return None
        ln = world.net.lane(uid)
        return {"id": uid, "speed_limit": ln.speed_limit}

    lane = world.net.lane(ego.lane_id)
    return {
        "tick": world.tick,
        "time": round(world.time, 9),
        "ego": {
            "id": ego.vid,
            "x": ego.pose.x,
            "y": ego.pose.y,
            "heading": ego.pose.heading,
            "speed": ego.speed,
            "accel": ego.accel,
            "lane": ego.lane_id,
            "s": ego.s,
            "l": ego.l,
            "length": ego.length,
            "width": ego.width,
            "route_remaining": remaining,
        },
        "neighbors": neighbors,
        "lane_context": {
            "current": {"id": ego.lane_id, "speed_limit": lane.speed_limit,
                        "change_permission": lane.change_permission},
            "left": side(lane.left_neighbor),
            "right": side(lane.right_neighbor),
        },
        "completion": completion,
    }


class _LineChannel:
    """Newline-framed messages over a stream socket with deadlines."""

    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.buf = b""

    def send(self, mtype: str, payload: dict) -> None:
        try:
            self.conn.sendall(encode_message(mtype, payload))
        except OSError as exc:
            raise ConnectionClosed(str(exc)) from None

    def recv(self, deadline: float) -> tuple[str, dict]:
        """Next message; raises TimeoutError past deadline, BadMessage on
        an undecodable line, ConnectionClosed when the peer hangs up."""
        while True:
            nl = self.buf.find(b"\n")
            if nl >= 0:
                line, self.buf = self.buf[:nl], self.buf[nl + 1:]
                if not line.strip():
                    continue
                return decode_message(line)
            remaining = deadline - _time.monotonic()
            if remaining <= 0:
                raise TimeoutError
            self.conn.settimeout(remaining)
            try:
                chunk = self.conn.recv(65536)
            except socket.timeout:
                raise TimeoutError from None
            except OSError as exc:
                raise ConnectionClosed(str(exc)) from None
            if not chunk:
                raise ConnectionClosed("peer closed the connection")
            self.buf += chunk

    def close(self) -> None:
        try:
            self.conn.close()
        except OSError:
            pass


def _fallback_reason(exc: Exception) -> str:
    if isinstance(exc, BadTrajectory):
        return "bad_trajectory"
    if isinstance(exc, UnknownMetaAction):
        return "unknown_meta_action"
    return "bad_message"


class AgentServer:
    """Engine-side endpoint: listens, handshakes, runs lockstep exchanges."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT,
                 timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self._chan: _LineChannel | None = None
        self._outstanding = 0

    def accept(self, map_name: str, dt: float,
               accept_timeout: float | None = None) -> None:
        self._listener.settimeout(accept_timeout
                                  if accept_timeout is not None
                                  else self.timeout)
        try:
            conn, _ = self._listener.accept()
        except socket.timeout:
            raise ConnectionClosed("no agent connected") from None
        self._chan = _LineChannel(conn)
        self._chan.send("hello", {"version": PROTOCOL_VERSION,
                                  "map": map_name, "dt": dt})
        deadline = _time.monotonic() + self.timeout
        try:
            mtype, payload = self._chan.recv(deadline)
        except TimeoutError:
            raise ConnectionClosed("handshake timed out") from None
        if mtype != "hello" or payload.get("version") != PROTOCOL_VERSION:
            self._chan.send("bye", {"reason": "version_mismatch"})
            self._chan.close()
            raise ProtocolViolation(
                f"handshake failed: {mtype} {payload.get('version')!r}")

    def exchange(self, obs: dict):
        """One lockstep turn.

        Returns ("action", AgentAction, decision_time) or
        ("fallback", reason). Raises ConnectionClosed when the peer is gone.
        """
        chan = self._chan
        chan.send("observation", obs)
        self._outstanding += 1
        t0 = _time.perf_counter()
        deadline = _time.monotonic() + self.timeout
        while True:
            try:
                mtype, payload = chan.recv(deadline)
            except TimeoutError:
                return ("fallback", "timeout")
            except BadMessage as exc:
                self._outstanding -= 1
                if self._outstanding > 0:
                    continue
                return ("fallback", _fallback_reason(exc))
            if mtype == "bye":
                raise ConnectionClosed("agent sent bye")
            self._outstanding -= 1
            if self._outstanding > 0:
                continue  # stale reply to an epoch already resolved as fallback
            if mtype != "action":
                return ("fallback", "bad_message")
            try:
                action = parse_action(payload)
            except (BadMessage, BadTrajectory, UnknownMetaAction) as exc:
                return ("fallback", _fallback_reason(exc))
            return ("action", action, _time.perf_counter() - t0)

    def close(self) -> None:
        if self._chan is not None:
            try:
                self._chan.send("bye", {"reason": "episode_end"})
            except ConnectionClosed:
                pass
            self._chan.close()
            self._chan = None
        self._listener.close()


class AgentClient:
    """Minimal agent-side endpoint, used by the integration tests."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = DEFAULT_PORT,
                 timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        conn = socket.create_connection((host, port), timeout=timeout)
        self._chan = _LineChannel(conn)
        self.hello: dict | None = None

    def handshake(self, version: str = PROTOCOL_VERSION) -> dict:
        deadline = _time.monotonic() + self.timeout
        mtype, payload = self._chan.recv(deadline)
        if mtype != "hello":
            raise ProtocolViolation(f"expected hello, got {mtype}")
        self.hello = payload
        self._chan.send("hello", {"version": version})
        return payload

    def recv(self) -> tuple[str, dict]:
        return self._chan.recv(_time.monotonic() + self.timeout)

    def send_action(self, payload: dict) -> None:
        self._chan.send("action", payload)

    def send_raw(self, data: bytes) -> None:
        try:
            self._chan.conn.sendall(data)
        except OSError as exc:
            raise ConnectionClosed(str(exc)) from None

    def close(self) -> None:
        self._chan.close()
