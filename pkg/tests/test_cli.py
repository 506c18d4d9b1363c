"""Command line behavior: artifacts, exit codes, batch, eval, render."""

import csv
import json
import math
from pathlib import Path

import matplotlib.image as mpimg
import numpy as np
import pytest

from simrun import cli
from simrun.render import fit_view
from simrun.road_network import parse_opendrive

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
SINGLE = str(SCENARIOS / "single_lane.toml")


def run_cli(*argv) -> int:
    return cli.main(list(argv))


def episode(tmp_path, *extra, config=SINGLE, seed="0", duration="3.0"):
    out = tmp_path / "out"
    code = run_cli("run", "--config", config, "--seed", seed,
                   "--out", str(out), "--set", f"run.duration={duration}",
                   *extra)
    return code, out


def test_run_writes_artifacts_and_exits_zero(tmp_path):
    code, out = episode(tmp_path)
    assert code == 0
    ep = out / "single_lane" / "0"
    rows = list(csv.reader(open(ep / "trajectory.csv")))
    assert rows[0] == ["vehicle_id", "t", "x", "y", "heading", "speed"]
    assert len(rows) > 1
    events = [json.loads(l) for l in open(ep / "events.jsonl")]
    assert any(e["kind"] == "spawn" and e.get("ego") for e in events)
    assert events[-1]["kind"] == "end"
    result = json.loads((ep / "result.json").read_text())
    for key in ("route_completion", "driving_score", "avg_decision_time",
                "success", "component_scores", "seed", "map", "dt",
                "time_budget"):
        assert key in result
    assert result["success"] is False  # 3 s is far too short to finish
    assert result["time_budget"] == pytest.approx(2.0 * 2200.0 / 30.0)


def test_config_error_exits_two_and_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    rel = SCENARIOS / "maps" / "single_lane.xodr"
    bad.write_text(f'[map]\npath = "{rel}"\n[run]\nduration = 5.0\n'
                   '[ego]\nroute = ["7.7.-7"]\n')
    code = run_cli("run", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "7.7.-7" in capsys.readouterr().err


def test_missing_config_exits_two(tmp_path, capsys):
    code = run_cli("run", "--config", str(tmp_path / "none.toml"))
    assert code == 2
    assert "config" in capsys.readouterr().err


def test_rerun_is_byte_identical(tmp_path):
    _, out1 = episode(tmp_path / "a", seed="5", duration="5.0")
    _, out2 = episode(tmp_path / "b", seed="5", duration="5.0")
    for name in ("trajectory.csv", "events.jsonl"):
        a = (out1 / "single_lane" / "5" / name).read_bytes()
        b = (out2 / "single_lane" / "5" / name).read_bytes()
        assert a == b


def test_out_dir_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("SIM_OUT_DIR", str(tmp_path / "envout"))
    code = run_cli("run", "--config", SINGLE, "--set", "run.duration=2.0")
    assert code == 0
    assert (tmp_path / "envout" / "single_lane" / "0" / "result.json").is_file()


def test_batch_writes_results_and_aggregate(tmp_path):
    code, out = episode(tmp_path, "--batch", "3", seed="4", duration="4.0")
    assert code == 0
    results = []
    for seed in (4, 5, 6):
        path = out / "single_lane" / str(seed) / "result.json"
        results.append(json.loads(path.read_text()))
    rows = list(csv.reader(open(out / "single_lane" / "aggregate.csv")))
    assert len(rows) == 2
    agg = dict(zip(rows[0], [float(v) for v in rows[1]]))
    scores = [r["driving_score"] for r in results]
    assert agg["driving_score_mean"] == pytest.approx(np.mean(scores))
    assert agg["driving_score_std"] == pytest.approx(np.std(scores))
    assert agg["success_mean"] == pytest.approx(
        np.mean([1.0 if r["success"] else 0.0 for r in results]))


def test_eval_matches_result_json(tmp_path, capsys):
    _, out = episode(tmp_path, duration="5.0")
    ep = out / "single_lane" / "0"
    capsys.readouterr()
    assert run_cli("eval", str(ep)) == 0
    rescored = json.loads(capsys.readouterr().out)
    stored = json.loads((ep / "result.json").read_text())
    for key in ("route_completion", "driving_score", "avg_decision_time"):
        assert rescored[key] == pytest.approx(stored[key], abs=1e-9)
    assert rescored["success"] == stored["success"]
    assert rescored["component_scores"] == stored["component_scores"]


def test_ego_collision_is_normal_result(tmp_path, monkeypatch):
    from simrun import config as config_mod

    real_build = config_mod.build_world

    def sabotaged(cfg, net, seed=None):
        world = real_build(cfg, net, seed=seed)
        real_run = world.run

        def run_and_collide(duration=None):
            real_run(duration)
            world.events.insert(len(world.events) - 1,
                                {"tick": world.tick, "kind": "collision",
                                 "a": 0, "b": 1})
            return "collision"

        world.run = run_and_collide
        return world

    monkeypatch.setattr(cli, "build_world", sabotaged)
    code, out = episode(tmp_path, duration="2.0")
    assert code == 0
    result = json.loads(
        (out / "single_lane" / "0" / "result.json").read_text())
    assert result["success"] is False
    assert result["component_scores"]["safety"] == 0.0


def test_render_frame_count_and_pixel_oracle(tmp_path):
    _, out = episode(tmp_path, duration="3.0")
    ep = out / "single_lane" / "0"
    assert run_cli("render", str(ep)) == 0
    frames = sorted((ep / "frames").glob("frame_*.png"))
    ticks = {r[1] for r in csv.reader(open(ep / "trajectory.csv"))} - {"t"}
    assert len(frames) == len(ticks) == 30
    assert (ep / "metrics.png").is_file()

    rows = [r for r in csv.reader(open(ep / "trajectory.csv"))
            if r[0] == "0"]
    t_sorted = sorted(float(r[1]) for r in rows)
    probe = t_sorted[12]
    ego = next(r for r in rows if float(r[1]) == probe)
    net = parse_opendrive(str(SCENARIOS / "maps" / "single_lane.xodr"))
    view = fit_view(net)
    px, py = view.to_pixel(float(ego[2]), float(ego[3]))
    im = mpimg.imread(frames[12])
    red = (im[:, :, 0] > 0.9) & (im[:, :, 1] < 0.1) & (im[:, :, 2] < 0.1)
    ys, xs = np.nonzero(red)
    assert len(xs) > 0
    assert abs(float(xs.mean()) - px) <= 1.0
    assert abs(float(ys.mean()) - py) <= 1.0


def test_render_plots_only_skips_frames(tmp_path):
    _, out = episode(tmp_path, duration="2.0")
    ep = out / "single_lane" / "0"
    assert run_cli("render", str(ep), "--plots-only") == 0
    assert (ep / "metrics.png").is_file()
    assert not (ep / "frames").exists()


def test_render_every_stride(tmp_path):
    _, out = episode(tmp_path, duration="3.0")
    ep = out / "single_lane" / "0"
    assert run_cli("render", str(ep), "--every", "10") == 0
    assert len(list((ep / "frames").glob("frame_*.png"))) == 3


def test_render_rejects_malformed_log(tmp_path, capsys):
    _, out = episode(tmp_path, duration="2.0")
    ep = out / "single_lane" / "0"
    (ep / "trajectory.csv").write_text("not,a,log\n1,2,3\n")
    assert run_cli("render", str(ep)) == 3
    assert "header" in capsys.readouterr().err


def test_render_missing_dir_exits_three(tmp_path, capsys):
    assert run_cli("render", str(tmp_path / "nope")) == 3
    capsys.readouterr()


def test_eval_missing_log_exits_three(tmp_path, capsys):
    assert run_cli("eval", str(tmp_path / "nope")) == 3
    capsys.readouterr()
