"""Reference external agent speaking the simulator wire protocol."""

from .client import (
    KEEP_LANE,
    PROTOCOL_VERSION,
    ProtocolError,
    ScriptPolicy,
    Transcript,
    connect_and_drive,
    keep_lane_policy,
    load_script,
)

__all__ = [
    "KEEP_LANE",
    "PROTOCOL_VERSION",
    "ProtocolError",
    "ScriptPolicy",
    "Transcript",
    "connect_and_drive",
    "keep_lane_policy",
    "load_script",
]
