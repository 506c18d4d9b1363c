"""Scenario config loading: section mapping, overrides, validation."""

import math
from pathlib import Path

import pytest

from simrun.config import build_world, load_config, parse_overrides, validate_lanes
from simrun.errors import ConfigError
from simrun.road_network import parse_opendrive

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write_cfg(tmp_path, body: str, head: str = "") -> Path:
    path = tmp_path / "scenario.toml"
    rel = SCENARIOS / "maps" / "single_lane.xodr"
    path.write_text(head + f'[map]\npath = "{rel}"\n' + body)
    return path


def test_defaults_and_section_mapping(tmp_path):
    cfg = load_config(write_cfg(tmp_path, head='name = "demo"\n', body="""
[run]
duration = 42.0
seed = 7
dt = 0.05

[ego]
route = ["1.0.-1"]
speed = 12.5

[aoi]
radius = 60.0

[planning]
iterations = 500
self_weight = 0.8
group_weight = 0.2

[behavior]
v0 = 31.0
politeness = 0.4
spawn_gap = 12.0

[metrics]
w_safety = 0.6
w_efficiency = 0.2
w_comfort = 0.2
budget_factor = 3.0

[[flows]]
routes = [["1.0.-1"]]
vehicles_per_hour = 100.0
"""))
    assert cfg.name == "demo"
    assert cfg.seed == 7
    assert cfg.duration == 42.0
    assert cfg.world.dt == 0.05
    assert cfg.world.planning.dt == 0.05
    assert cfg.ego.route == ["1.0.-1"]
    assert cfg.ego.speed == 12.5
    assert cfg.ego.controller == "builtin_planner"
    assert cfg.world.aoi.radius == 60.0
    assert cfg.world.planning.mcts.iterations == 500
    assert cfg.world.planning.svo.self_weight == 0.8
    assert cfg.world.planning.svo.group_weight == 0.2
    assert cfg.world.idm.v0 == 31.0
    assert cfg.world.mobil.politeness == 0.4
    assert cfg.world.spawn_gap == 12.0
    assert cfg.metrics.w_safety == 0.6
    assert cfg.budget_factor == 3.0
    assert len(cfg.flows) == 1 and cfg.flows[0].vehicles_per_hour == 100.0


def test_override_parsing_and_precedence(tmp_path):
    path = write_cfg(tmp_path, """
[run]
duration = 10.0
[ego]
route = ["1.0.-1"]
""")
    cfg = load_config(path, ["run.duration=25.5", "run.seed=3",
                            "aoi.radius=44.0", "ego.speed=9.0"])
    assert cfg.duration == 25.5
    assert cfg.seed == 3
    assert cfg.world.aoi.radius == 44.0
    assert cfg.ego.speed == 9.0


def test_override_scalar_types():
    tree = parse_overrides(["a.b=1.5", "a.c=true", "a.d=7", 'a.e="x"',
                            "a.f=plain"])
    assert tree == {"a": {"b": 1.5, "c": True, "d": 7, "e": "x",
                          "f": "plain"}}
    with pytest.raises(ConfigError):
        parse_overrides(["noequals"])
    with pytest.raises(ConfigError):
        parse_overrides(["toplevel=1"])


@pytest.mark.parametrize("body,needle", [
    ("[run]\nduration = -5\n", "run.duration"),
    ("[run]\nduration = 10\nbogus = 1\n", "run.bogus"),
    ("[aoi]\nradius = 50.0\nwobble = 2\n", "aoi.wobble"),
    ("[planning]\nmystery = 1\n[run]\nduration = 10\n", "planning.mystery"),
    ("[behavior]\nv0 = \"fast\"\n[run]\nduration = 10\n", "behavior.v0"),
    ("[metrics]\nw_safety = 0.9\n[run]\nduration = 10\n", "metrics.w_"),
    ("[ego]\nspeed = 1.0\n[run]\nduration = 10\n", "ego.route"),
    ("[[flows]]\nroutes = [[\"1.0.-1\"]]\n[run]\nduration = 10\n",
     "flows[0].vehicles_per_hour"),
])
def test_invalid_config_names_field(tmp_path, body, needle):
    with pytest.raises(ConfigError) as err:
        load_config(write_cfg(tmp_path, body))
    assert needle in str(err.value)


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError) as err:
        load_config(write_cfg(tmp_path, "[telemetry]\nx = 1\n"))
    assert "telemetry" in str(err.value)


def test_missing_map_file(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[map]\npath = "nowhere.xodr"\n[run]\nduration = 10\n')
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert "map.path" in str(err.value)


def test_lane_validation_names_missing_lane(tmp_path):
    path = write_cfg(tmp_path, """
[run]
duration = 10.0
[ego]
route = ["9.9.-9"]
""")
    cfg = load_config(path)
    net = parse_opendrive(str(cfg.map_path))
    with pytest.raises(ConfigError) as err:
        validate_lanes(cfg, net)
    assert "9.9.-9" in str(err.value)


def test_external_controller_address(tmp_path):
    cfg = load_config(write_cfg(tmp_path, """
[run]
duration = 10.0
[ego]
route = ["1.0.-1"]
controller = "external"
external = { address = "0.0.0.0:9000", timeout = 5.0 }
"""))
    assert cfg.ego.controller == "external"
    assert cfg.ego.host == "0.0.0.0"
    assert cfg.ego.port == 9000
    assert cfg.ego.timeout == 5.0


def test_build_world_attaches_flows_and_seed(tmp_path):
    path = write_cfg(tmp_path, """
[run]
duration = 10.0
seed = 5
[[flows]]
routes = [["1.0.-1"]]
vehicles_per_hour = 200.0
""")
    cfg = load_config(path)
    net = parse_opendrive(str(cfg.map_path))
    world = build_world(cfg, net)
    assert world.seed == 5
    assert len(world.flows) == 1
    world2 = build_world(cfg, net, seed=9)
    assert world2.seed == 9


def test_bundled_scenarios_parse():
    for name in ("highway", "intersection", "ramp", "roundabout",
                 "single_lane"):
        cfg = load_config(SCENARIOS / f"{name}.toml")
        net = parse_opendrive(str(cfg.map_path))
        validate_lanes(cfg, net)
        assert cfg.duration > 0
        assert math.isinf(cfg.metrics.time_budget)
