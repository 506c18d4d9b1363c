"""Protocol client: handshake, then one action per observation until bye.

Messages are newline-delimited JSON objects {"type", "payload"} over a
stream socket. The engine is the server and drives the exchange; this
client blocks on each incoming message, answers observations through a
policy callable, and returns a transcript when the engine says bye.
Anything the engine sends that violates the protocol raises
ProtocolError, which the CLI turns into a nonzero exit.
"""

from __future__ import annotations

import json
import socket
import time
from dataclasses import dataclass, field

PROTOCOL_VERSION = "1"
KEEP_LANE = "keep_lane_cruise"
MESSAGE_TYPES = ("hello", "observation", "action", "bye")


class ProtocolError(Exception):
    """The engine broke the wire contract (or vanished mid-episode)."""


def keep_lane_policy(obs: dict) -> dict:
    return {"meta_action": KEEP_LANE}


class ScriptPolicy:
    """Actions keyed on observation tick; unlisted ticks keep the lane.

    The table maps tick numbers to action payloads, e.g.
    {"50": {"meta_action": "change_left"}}. JSON object keys are strings,
    so numeric strings are accepted and normalized.
    """

    def __init__(self, table: dict):
        self.table: dict[int, dict] = {}
        for key, action in table.items():
            try:
                tick = int(key)
            except (TypeError, ValueError):
                raise ValueError(f"script keys must be ticks, got {key!r}") \
                    from None
            if not isinstance(action, dict):
                raise ValueError(f"script actions must be objects, "
                                 f"got {action!r}")
            self.table[tick] = action

    def __call__(self, obs: dict) -> dict:
        return self.table.get(obs.get("tick"), {"meta_action": KEEP_LANE})


def load_script(path: str) -> ScriptPolicy:
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("script file must hold a JSON object")
    return ScriptPolicy(doc)


@dataclass
class Transcript:
    """What happened during one session, for logging and tests."""

    hello: dict
    observations: int = 0
    actions: list[dict] = field(default_factory=list)
    bye: dict | None = None


class _LineChannel:
    """Newline framing plus JSON envelope decoding over a socket."""

    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.buf = b""

    def send(self, mtype: str, payload: dict) -> None:
        line = json.dumps({"type": mtype, "payload": payload},
                          separators=(",", ":")) + "\n"
        self.conn.sendall(line.encode())

    def _pop_line(self) -> bytes | None:
        nl = self.buf.find(b"\n")
        if nl < 0:
            return None
        line, self.buf = self.buf[:nl], self.buf[nl + 1:]
        return line

    def recv(self) -> tuple[str, dict]:
        while True:
            line = self._pop_line()
            if line is not None:
                if not line.strip():
                    continue
                return _decode(line)
            chunk = self.conn.recv(65536)
            if not chunk:
                raise ProtocolError("connection closed without bye")
            self.buf += chunk

    def drain(self) -> list[tuple[str, dict]]:
        """Already-delivered messages, without blocking for more."""
        self.conn.setblocking(False)
        try:
            while True:
                chunk = self.conn.recv(65536)
                if not chunk:
                    break
                self.buf += chunk
        except OSError:
            pass
        out = []
        while True:
            line = self._pop_line()
            if line is None:
                break
            if not line.strip():
                continue
            try:
                out.append(_decode(line))
            except ProtocolError:
                continue
        return out


def _decode(line: bytes) -> tuple[str, dict]:
    try:
        obj = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"engine sent invalid JSON: {exc}") from None
    if not isinstance(obj, dict) or set(obj) != {"type", "payload"} \
            or obj["type"] not in MESSAGE_TYPES \
            or not isinstance(obj["payload"], dict):
        raise ProtocolError(f"malformed envelope: {line[:120]!r}")
    return obj["type"], obj["payload"]


def _connect(host: str, port: int, budget: float) -> socket.socket:
    # the engine may come up a moment after the agent; retry within budget
    deadline = time.monotonic() + budget
    while True:
        try:
            return socket.create_connection((host, port), timeout=budget)
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)


def connect_and_drive(address: str, policy, latency: float = 0.0,
                      connect_timeout: float = 30.0) -> Transcript:
    """Run one full session against the engine at HOST:PORT.

    policy is a callable from observation payload to action payload;
    latency, when positive, is slept before every reply to simulate a slow
    decision pipeline. Returns the session transcript on a clean bye.
    """
    host, _, port_text = address.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {address!r}")
    conn = _connect(host, int(port_text), connect_timeout)
    chan = _LineChannel(conn)
    try:
        mtype, payload = chan.recv()
        if mtype != "hello":
            raise ProtocolError(f"expected hello, got {mtype}")
        if payload.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"unsupported protocol version {payload.get('version')!r}")
        chan.send("hello", {"version": PROTOCOL_VERSION})
        transcript = Transcript(hello=payload)
        while True:
            mtype, payload = chan.recv()
            if mtype == "bye":
                transcript.bye = payload
                return transcript
            if mtype != "observation":
                raise ProtocolError(f"unexpected {mtype} mid-episode")
            transcript.observations += 1
            if latency > 0.0:
                time.sleep(latency)
            action = policy(payload)
            try:
                chan.send("action", action)
            except OSError:
                # the engine hangs up right after its bye; a reply to a
                # still-queued observation then has no reader
                for t, p in chan.drain():
                    if t == "bye":
                        transcript.bye = p
                        return transcript
                raise ProtocolError("connection lost mid-reply") from None
            transcript.actions.append(action)
    finally:
        conn.close()
