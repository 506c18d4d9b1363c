"""Scenario configuration: TOML sections mapped onto module parameters.

Each section mirrors one subsystem ([aoi], [planning], [behavior],
[metrics], [replay]); scalar values can be overridden from the command
line with section.key=value pairs. Validation errors always name the
offending field.
"""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

try:
    import tomllib as _toml
except ModuleNotFoundError:
    import tomli as _toml

from .behavior import IdmParams, MobilParams
from .errors import ConfigError
from .evaluation import MetricConfig
from .mcts import MctsConfig
from .planner import PlannerConfig, SvoWeights
from .replay import ReplayConfig
from .world import AoiConfig, FlowSpec, World, WorldConfig

KNOWN_SECTIONS = ("map", "run", "ego", "flows", "aoi", "planning",
                  "behavior", "metrics", "replay")


def _fields(cls) -> dict[str, type]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


@dataclasses.dataclass
class EgoSpec:
    route: list[str]
    speed: float | None = None
    controller: str = "builtin_planner"
    host: str = "127.0.0.1"
    port: int = 7766
    timeout: float = 30.0


@dataclasses.dataclass
class ScenarioConfig:
    name: str
    map_path: Path
    seed: int
    duration: float
    world: WorldConfig
    ego: EgoSpec | None
    flows: list[FlowSpec]
    metrics: MetricConfig
    budget_factor: float
    replay_path: Path | None
    replay: ReplayConfig


def _scalar(text: str):
    try:
        return _toml.loads(f"v = {text}")["v"]
    except _toml.TOMLDecodeError:
        return text


def parse_overrides(pairs) -> dict:
    """section.key=value strings into a nested override mapping."""
    tree: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not section.key=value")
        dotted, raw = pair.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) < 2 or not all(parts):
            raise ConfigError(f"override {pair!r} is not section.key=value")
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} conflicts")
        node[parts[-1]] = _scalar(raw.strip())
    return tree


def _merge(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def _coerce(section: str, key: str, value, template):
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be a boolean")
        return value
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number")
        return float(value)
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer")
        return value
    if isinstance(template, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{section}.{key} must be a list")
        return tuple(float(x) for x in value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string")
        return value
    return value


def _apply(obj, data: dict, section: str, skip=()):
    """Set matching dataclass fields from `data`; returns (obj, unused).

    Frozen dataclasses are rebuilt via replace, so callers must keep the
    returned object.
    """
    names = _fields(type(obj))
    frozen = type(obj).__dataclass_params__.frozen
    updates = {}
    rest = {}
    for key, value in data.items():
        if key in skip or key not in names:
            rest[key] = value
            continue
        coerced = _coerce(section, key, value, getattr(obj, key))
        if frozen:
            updates[key] = coerced
        else:
            setattr(obj, key, coerced)
    if updates:
        obj = dataclasses.replace(obj, **updates)
    return obj, rest


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ConfigError(f"{section}.{key} is required")
    return table[key]


def load_config(path, overrides=()) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "rb") as fh:
            doc = _toml.load(fh)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config {path.name}: {exc}") from None
    _merge(doc, parse_overrides(overrides))

    for key in doc:
        if key not in KNOWN_SECTIONS and key != "name":
            raise ConfigError(f"unknown config section {key!r}")

    name = doc.get("name", path.stem)
    if not isinstance(name, str) or not name:
        raise ConfigError("name must be a non-empty string")

    map_tbl = dict(doc.get("map", {}))
    map_rel = _require(map_tbl, "map", "path")
    map_tbl.pop("path")
    if map_tbl:
        raise ConfigError(
            f"map.{sorted(map_tbl)[0]} is not a recognized setting")
    if not isinstance(map_rel, str):
        raise ConfigError("map.path must be a string")
    map_path = (path.parent / map_rel).resolve()
    if not map_path.is_file():
        raise ConfigError(f"map.path: file {map_rel!r} not found")

    run_tbl = dict(doc.get("run", {}))
    world = WorldConfig()
    duration = run_tbl.pop("duration", world.duration)
    if isinstance(duration, bool) or not isinstance(duration, (int, float)) \
            or duration <= 0:
        raise ConfigError("run.duration must be > 0")
    seed = run_tbl.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("run.seed must be a non-negative integer")
    dt = run_tbl.pop("dt", world.dt)
    if isinstance(dt, bool) or not isinstance(dt, (int, float)) or dt <= 0:
        raise ConfigError("run.dt must be > 0")
    if run_tbl:
        bad = sorted(run_tbl)[0]
        raise ConfigError(f"run.{bad} is not a recognized setting")
    world.dt = float(dt)
    world.duration = float(duration)
    world.planning.dt = world.dt

    world.aoi, rest = _apply(world.aoi, doc.get("aoi", {}), "aoi")
    if rest:
        raise ConfigError(f"aoi.{sorted(rest)[0]} is not a recognized setting")

    planning_tbl = dict(doc.get("planning", {}))
    if "background_iterations" in planning_tbl:
        bi = planning_tbl.pop("background_iterations")
        if isinstance(bi, bool) or not isinstance(bi, int) or bi <= 0:
            raise ConfigError(
                "planning.background_iterations must be a positive integer")
        world.background_iterations = bi
    world.planning, rest = _apply(world.planning, planning_tbl, "planning",
                                  skip=("mcts", "svo", "dt"))
    world.planning.mcts, rest = _apply(world.planning.mcts, rest, "planning")
    world.planning.svo, rest = _apply(world.planning.svo, rest, "planning")
    if rest:
        raise ConfigError(
            f"planning.{sorted(rest)[0]} is not a recognized setting")

    behavior_tbl = dict(doc.get("behavior", {}))
    if "coarse_mobil" in behavior_tbl:
        cm = behavior_tbl.pop("coarse_mobil")
        if not isinstance(cm, bool):
            raise ConfigError("behavior.coarse_mobil must be a boolean")
        world.coarse_mobil = cm
    world.idm, rest = _apply(world.idm, behavior_tbl, "behavior")
    world.mobil, rest = _apply(world.mobil, rest, "behavior")
    known_world = ("perception_radius", "mandatory_distance",
                   "change_cooldown", "blend_duration", "spawn_gap",
                   "spawn_s", "vehicle_length", "vehicle_width")
    leftover = {}
    for key, value in rest.items():
        if key in known_world:
            setattr(world, key,
                    _coerce("behavior", key, value, getattr(world, key)))
        else:
            leftover[key] = value
    if leftover:
        raise ConfigError(
            f"behavior.{sorted(leftover)[0]} is not a recognized setting")

    metrics_tbl = dict(doc.get("metrics", {}))
    budget_factor = metrics_tbl.pop("budget_factor", 2.0)
    if isinstance(budget_factor, bool) \
            or not isinstance(budget_factor, (int, float)) \
            or budget_factor <= 0:
        raise ConfigError("metrics.budget_factor must be > 0")
    metrics, rest = _apply(MetricConfig(), metrics_tbl, "metrics")
    if rest:
        raise ConfigError(
            f"metrics.{sorted(rest)[0]} is not a recognized setting")
    wsum = metrics.w_safety + metrics.w_efficiency + metrics.w_comfort
    if abs(wsum - 1.0) > 1e-9:
        raise ConfigError("metrics.w_safety/w_efficiency/w_comfort "
                          "must sum to 1")

    replay_tbl = dict(doc.get("replay", {}))
    replay_rel = replay_tbl.pop("path", None)
    replay_path = None
    if replay_rel is not None:
        if not isinstance(replay_rel, str):
            raise ConfigError("replay.path must be a string")
        replay_path = (path.parent / replay_rel).resolve()
        if not replay_path.is_file():
            raise ConfigError(f"replay.path: file {replay_rel!r} not found")
    replay, rest = _apply(ReplayConfig(), replay_tbl, "replay")
    if rest:
        raise ConfigError(
            f"replay.{sorted(rest)[0]} is not a recognized setting")

    ego = None
    if "ego" in doc:
        ego_tbl = dict(doc["ego"])
        route = _require(ego_tbl, "ego", "route")
        ego_tbl.pop("route")
        if not isinstance(route, list) or not route \
                or not all(isinstance(u, str) for u in route):
            raise ConfigError("ego.route must be a non-empty lane id list")
        speed = ego_tbl.pop("speed", None)
        if speed is not None and (isinstance(speed, bool)
                                  or not isinstance(speed, (int, float))
                                  or speed < 0):
            raise ConfigError("ego.speed must be >= 0")
        controller = ego_tbl.pop("controller", "builtin_planner")
        if controller not in ("builtin_planner", "external"):
            raise ConfigError("ego.controller must be builtin_planner "
                              "or external")
        ext = ego_tbl.pop("external", {})
        if ego_tbl:
            raise ConfigError(
                f"ego.{sorted(ego_tbl)[0]} is not a recognized setting")
        if not isinstance(ext, dict):
            raise ConfigError("ego.external must be a table")
        ext = dict(ext)
        address = ext.pop("address", "127.0.0.1:7766")
        timeout = ext.pop("timeout", 30.0)
        if ext:
            raise ConfigError(
                f"ego.external.{sorted(ext)[0]} is not a recognized setting")
        if not isinstance(address, str) or ":" not in address:
            raise ConfigError("ego.external.address must be HOST:PORT")
        host, port_text = address.rsplit(":", 1)
        try:
            port = int(port_text)
        except ValueError:
            raise ConfigError("ego.external.address must be HOST:PORT") \
                from None
        if isinstance(timeout, bool) or not isinstance(timeout, (int, float))\
                or timeout <= 0:
            raise ConfigError("ego.external.timeout must be > 0")
        ego = EgoSpec(route=route,
                      speed=None if speed is None else float(speed),
                      controller=controller, host=host, port=port,
                      timeout=float(timeout))

    flows = []
    flow_list = doc.get("flows", [])
    if not isinstance(flow_list, list):
        raise ConfigError("flows must be an array of tables")
    for i, tbl in enumerate(flow_list):
        label = f"flows[{i}]"
        if not isinstance(tbl, dict):
            raise ConfigError(f"{label} must be a table")
        tbl = dict(tbl)
        routes = _require(tbl, label, "routes")
        tbl.pop("routes")
        if not isinstance(routes, list) or not routes or not all(
                isinstance(r, list) and r
                and all(isinstance(u, str) for u in r) for r in routes):
            raise ConfigError(f"{label}.routes must be a list of lane id "
                              "lists")
        vph = _require(tbl, label, "vehicles_per_hour")
        tbl.pop("vehicles_per_hour")
        if isinstance(vph, bool) or not isinstance(vph, (int, float)) \
                or vph < 0:
            raise ConfigError(f"{label}.vehicles_per_hour must be >= 0")
        speed = tbl.pop("speed", 13.89)
        jitter = tbl.pop("speed_jitter", 0.1)
        if tbl:
            raise ConfigError(
                f"{label}.{sorted(tbl)[0]} is not a recognized setting")
        if isinstance(speed, bool) or not isinstance(speed, (int, float)) \
                or speed <= 0:
            raise ConfigError(f"{label}.speed must be > 0")
        if isinstance(jitter, bool) or not isinstance(jitter, (int, float)) \
                or not 0 <= jitter < 1:
            raise ConfigError(f"{label}.speed_jitter must be in [0, 1)")
        flows.append(FlowSpec(routes=[list(r) for r in routes],
                              vehicles_per_hour=float(vph),
                              speed=float(speed), speed_jitter=float(jitter)))

    return ScenarioConfig(name=name, map_path=map_path, seed=seed,
                          duration=float(duration), world=world, ego=ego,
                          flows=flows, metrics=metrics,
                          budget_factor=float(budget_factor),
                          replay_path=replay_path, replay=replay)


def validate_lanes(cfg: ScenarioConfig, net) -> None:
    """Every referenced lane id must exist in the parsed map."""
    if cfg.ego is not None:
        for uid in cfg.ego.route:
            if uid not in net.lanes:
                raise ConfigError(f"ego.route: lane {uid!r} not in map")
    for i, flow in enumerate(cfg.flows):
        for rte in flow.routes:
            for uid in rte:
                if uid not in net.lanes:
                    raise ConfigError(
                        f"flows[{i}].routes: lane {uid!r} not in map")


def build_world(cfg: ScenarioConfig, net, seed: int | None = None) -> World:
    """World with flows and replay attached; the ego is added by the caller
    because external control needs a live connection first."""
    world = World(net, cfg.world, seed=cfg.seed if seed is None else seed)
    for flow in cfg.flows:
        world.add_flow(flow)
    if cfg.replay_path is not None:
        from .replay import ReplayManager, load_tracks
        world.attach_replay(ReplayManager(load_tracks(cfg.replay_path),
                                          cfg.replay))
    return world
