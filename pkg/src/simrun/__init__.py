"""Closed-loop microscopic traffic simulation with scoped planning detail.

The package couples an OpenDRIVE-subset road network, IDM/MOBIL background
traffic, and a two-layer ego planner (MCTS over meta-actions above quintic
trajectory sampling) behind a deterministic fixed-step engine. An
attention-area mechanism keeps full planning detail near the ego vehicle and
cheap car-following elsewhere, and a TCP line-protocol lets an external agent
drive the ego in lockstep.
"""

__version__ = "0.1.0"
