"""Episode metrics from persisted logs: completion, driving score, success.

All functions are pure over the event list a run produces, so recomputing
from a saved events.jsonl reproduces the in-engine result bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EMERGENCY_DECEL = 8.0  # m/s^2, full-braking reference for corner flags


@dataclass
class MetricConfig:
    w_safety: float = 0.5
    w_efficiency: float = 0.25
    w_comfort: float = 0.25
    jerk_max: float = 2.0
    lat_acc_max: float = 3.0
    ttc_min: float = 2.0
    time_budget: float = math.inf  # s; caller sets 2x free-flow by default
    emergency_decel: float = EMERGENCY_DECEL


@dataclass
class EpisodeResult:
    route_completion: float
    driving_score: float
    avg_decision_time: float
    success: bool
    component_scores: dict[str, float]
    events: list[dict] = field(default_factory=list)
    terminated: str = ""
    duration: float = 0.0

    def to_dict(self) -> dict:
        return {
            "route_completion": self.route_completion,
            "driving_score": self.driving_score,
            "avg_decision_time": self.avg_decision_time,
            "success": self.success,
            "component_scores": dict(self.component_scores),
            "corner_cases": list(self.events),
            "terminated": self.terminated,
            "duration": self.duration,
        }


def _ego_id(events: list[dict]) -> int | None:
    for e in events:
        if e["kind"] == "spawn" and e.get("ego"):
            return e["vehicle"]
    return None


def _samples(events: list[dict]) -> list[dict]:
    return [e for e in events if e["kind"] == "metric_sample"]


def ego_collided(events: list[dict]) -> bool:
    ego = _ego_id(events)
    if ego is None:
        return False
    return any(e["kind"] == "collision" and ego in (e["a"], e["b"])
               for e in events)


def route_completion(events: list[dict]) -> float:
    """Percent of the route's arc length covered, 100 on reaching the end."""
    ego = _ego_id(events)
    if ego is None:
        return 0.0
    if any(e["kind"] == "despawn" and e["vehicle"] == ego
           and e["reason"] == "route_end" for e in events):
        return 100.0
    total = next((e.get("total", 0.0) for e in events
                  if e["kind"] == "spawn" and e.get("ego")), 0.0)
    if total <= 0.0:
        return 100.0
    samples = _samples(events)
    if not samples:
        return 0.0
    remaining = samples[-1]["remaining"]
    return max(0.0, min(100.0, 100.0 * (1.0 - remaining / total)))


def component_scores(events: list[dict],
                     cfg: MetricConfig | None = None) -> dict[str, float]:
    cfg = cfg or MetricConfig()
    samples = _samples(events)
    if not samples:
        return {"comfort": 100.0, "efficiency": 0.0,
                "safety": 0.0 if ego_collided(events) else 100.0}
    ok = [1.0 if (abs(s["jerk"]) <= cfg.jerk_max
                  and abs(s["lat_acc"]) <= cfg.lat_acc_max) else 0.0
          for s in samples]
    comfort = 100.0 * float(np.mean(ok))
    ratio = [min(s["v"] / s["limit"], 1.0) if s["limit"] > 0 else 1.0
             for s in samples]
    efficiency = 100.0 * float(np.mean(ratio))
    if ego_collided(events):
        safety = 0.0
    else:
        ttcs = [s["ttc"] for s in samples if s["ttc"] is not None]
        if not ttcs:
            safety = 100.0
        else:
            safety = 100.0 * min(min(ttcs) / cfg.ttc_min, 1.0)
    return {"comfort": comfort, "efficiency": efficiency, "safety": safety}


def driving_score(components: dict[str, float],
                  cfg: MetricConfig | None = None) -> float:
    cfg = cfg or MetricConfig()
    return (cfg.w_safety * components["safety"]
            + cfg.w_efficiency * components["efficiency"]
            + cfg.w_comfort * components["comfort"])


def flag_corner_cases(events: list[dict], cfg: MetricConfig | None = None,
                      positions: dict[int, tuple[float, float]] | None = None,
                      window: int = 50, dt: float = 0.1) -> list[dict]:
    """Tagged anomalies with a replayable tick window around each."""
    cfg = cfg or MetricConfig()
    out: list[dict] = []

    def emit(tick: int, kind: str, **detail):
        case = {"tick": tick, "kind": kind,
                "window": [max(tick - window, 0), tick + window]}
        if positions and tick in positions:
            case["position"] = list(positions[tick])
        case.update(detail)
        out.append(case)

    brake_thr = 0.8 * cfg.emergency_decel
    prev_ttc = None
    prev_v = None
    prev_tick = None
    braking = False
    for e in events:
        kind = e["kind"]
        if kind == "metric_sample":
            ttc = e["ttc"]
            if ttc is not None and ttc < cfg.ttc_min and \
                    (prev_ttc is None or prev_ttc >= cfg.ttc_min):
                emit(e["tick"], "ttc_dip", ttc=ttc)
            prev_ttc = ttc
            if prev_v is not None and prev_tick is not None:
                dt_ticks = e["tick"] - prev_tick
                if dt_ticks > 0:
                    decel = (prev_v - e["v"]) / (dt_ticks * dt)
                    if decel > brake_thr and not braking:
                        emit(e["tick"], "hard_brake", decel=decel)
                    braking = decel > brake_thr
            prev_v = e["v"]
            prev_tick = e["tick"]
        elif kind == "planner_fallback":
            emit(e["tick"], "planner_fallback", reason=e["reason"])
        elif kind == "agent_fallback":
            emit(e["tick"], "agent_fallback", reason=e["reason"])
        elif kind == "override_on":
            emit(e["tick"], "override", reason=e["reason"])
    return out


def episode_result(events: list[dict], decision_times: list[float],
                   cfg: MetricConfig | None = None,
                   dt: float = 0.1) -> EpisodeResult:
    cfg = cfg or MetricConfig()
    comps = component_scores(events, cfg)
    rc = route_completion(events)
    score = driving_score(comps, cfg)
    avg_dt = float(np.mean(decision_times)) if decision_times else 0.0
    end = next((e for e in reversed(events) if e["kind"] == "end"), None)
    last_tick = end["tick"] if end is not None else \
        (events[-1]["tick"] if events else 0)
    duration = last_tick * dt
    terminated = end["reason"] if end is not None else ""
    success = (rc >= 100.0 and not ego_collided(events)
               and duration <= cfg.time_budget)
    return EpisodeResult(route_completion=rc, driving_score=score,
                         avg_decision_time=avg_dt, success=success,
                         component_scores=comps,
                         events=flag_corner_cases(events, cfg, dt=dt),
                         terminated=terminated, duration=duration)


def free_flow_budget(net, rte: list[str], factor: float = 2.0) -> float:
    """Time budget: factor x the traversal time at lane speed limits.

    Lateral hops reuse the base lane's remaining length, so only successor
    hops add their full lane's traversal time.
    """
    total = 0.0
    for i, uid in enumerate(rte):
        lane = net.lane(uid)
        if i > 0 and uid not in net.lane(rte[i - 1]).successors:
            continue  # lateral hop: distance already counted
        total += lane.length / max(lane.speed_limit, 0.1)
    return factor * total


def aggregate_results(results: list[EpisodeResult]) -> dict[str, dict]:
    """Mean and population std per metric across a batch."""
    fields = {
        "route_completion": [r.route_completion for r in results],
        "driving_score": [r.driving_score for r in results],
        "avg_decision_time": [r.avg_decision_time for r in results],
        "success": [1.0 if r.success else 0.0 for r in results],
        "comfort": [r.component_scores["comfort"] for r in results],
        "efficiency": [r.component_scores["efficiency"] for r in results],
        "safety": [r.component_scores["safety"] for r in results],
    }
    return {name: {"mean": float(np.mean(vals)),
                   "std": float(np.std(vals))}
            for name, vals in fields.items()}
