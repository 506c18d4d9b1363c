"""Command line front end: run scenarios, render logs, re-score episodes.

Exit codes: 0 on a completed run (an ego collision is a normal result
with success=false), 2 on configuration errors, 3 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

from .config import ScenarioConfig, build_world, load_config, validate_lanes
from .errors import ConfigError, SimError
from .evaluation import (EpisodeResult, MetricConfig, aggregate_results,
                         episode_result, free_flow_budget)
from .road_network import parse_opendrive

AGGREGATE_FIELDS = ("route_completion", "driving_score", "avg_decision_time",
                    "success", "comfort", "efficiency", "safety")


def _metric_config(cfg: ScenarioConfig, net) -> MetricConfig:
    metrics = dataclasses.replace(cfg.metrics)
    if math.isinf(metrics.time_budget) and cfg.ego is not None:
        metrics.time_budget = free_flow_budget(net, cfg.ego.route,
                                               cfg.budget_factor)
    return metrics


def _write_episode(out_dir: Path, world, result: EpisodeResult,
                   cfg: ScenarioConfig, seed: int,
                   metrics: MetricConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "t", "x", "y", "heading", "speed"])
        for vid, t, x, y, heading, speed in world.traj_rows:
            writer.writerow([vid, repr(t), repr(x), repr(y), repr(heading),
                             repr(speed)])
    with open(out_dir / "events.jsonl", "w") as fh:
        for event in world.events:
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")
    doc = result.to_dict()
    doc.update({
        "scenario": cfg.name,
        "seed": seed,
        "map": str(cfg.map_path),
        "dt": world.dt,
        "time_budget": metrics.time_budget,
        "aoi_radius": cfg.world.aoi.radius,
        "vehicle_length": cfg.world.vehicle_length,
        "vehicle_width": cfg.world.vehicle_width,
    })
    with open(out_dir / "result.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_result(cfg: ScenarioConfig, seed: int,
                  result: EpisodeResult) -> None:
    print(f"[{cfg.name} seed {seed}] "
          f"driving_score={result.driving_score:.2f} "
          f"route_completion={result.route_completion:.2f} "
          f"avg_decision_time={result.avg_decision_time:.4f} "
          f"success={str(result.success).lower()}")


def run_episode(cfg: ScenarioConfig, net, seed: int,
                out_dir: Path) -> EpisodeResult:
    """One deterministic episode: build, drive, persist artifacts."""
    world = build_world(cfg, net, seed=seed)
    metrics = _metric_config(cfg, net)
    server = None
    try:
        if cfg.ego is not None and cfg.ego.controller == "external":
            from .protocol import AgentServer
            server = AgentServer(cfg.ego.host, cfg.ego.port,
                                 timeout=cfg.ego.timeout)
            host, port = server.address
            print(f"waiting for agent on {host}:{port}", flush=True)
            server.accept(cfg.map_path.stem, world.dt)
            world.external_exchange = server.exchange
            world.add_ego(cfg.ego.route, speed=cfg.ego.speed, external=True)
        elif cfg.ego is not None:
            world.add_ego(cfg.ego.route, speed=cfg.ego.speed)
        world.run(cfg.duration)
    finally:
        if server is not None:
            server.close()
    result = episode_result(world.events, world.decision_times, metrics,
                            dt=world.dt)
    _write_episode(out_dir, world, result, cfg, seed, metrics)
    return result


def _write_aggregate(path: Path, results: list[EpisodeResult]) -> None:
    agg = aggregate_results(results)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header: list[str] = []
        row: list[str] = []
        for name in AGGREGATE_FIELDS:
            header += [f"{name}_mean", f"{name}_std"]
            row += [repr(agg[name]["mean"]), repr(agg[name]["std"])]
        writer.writerow(header)
        writer.writerow(row)


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.batch < 1:
        raise ConfigError("--batch must be >= 1")
    net = parse_opendrive(str(cfg.map_path))
    validate_lanes(cfg, net)
    out_root = Path(args.out or os.environ.get("SIM_OUT_DIR", "out"))
    results = []
    for seed in range(cfg.seed, cfg.seed + args.batch):
        result = run_episode(cfg, net, seed,
                             out_root / cfg.name / str(seed))
        _print_result(cfg, seed, result)
        results.append(result)
    if args.batch > 1:
        agg_path = out_root / cfg.name / "aggregate.csv"
        _write_aggregate(agg_path, results)
        agg = aggregate_results(results)
        summary = " ".join(
            f"{name}={agg[name]['mean']:.3f}±{agg[name]['std']:.3f}"
            for name in ("driving_score", "route_completion", "success"))
        print(f"[{cfg.name} batch {args.batch}] {summary}")
    return 0


def _cmd_render(args) -> int:
    from .render import render_log
    out = render_log(args.log_dir, out_dir=args.out, map_path=args.map,
                     plots_only=args.plots_only, every=args.every,
                     scale=args.scale)
    print(f"rendered {out['frames']} frames, "
          f"{len(out['plots'])} plot(s)")
    return 0


def _cmd_eval(args) -> int:
    from .render import load_events
    log_dir = Path(args.log_dir)
    events = load_events(log_dir / "events.jsonl")
    metrics = MetricConfig()
    dt = 0.1
    decision_times: list[float] = []
    result_path = log_dir / "result.json"
    if result_path.is_file():
        meta = json.loads(result_path.read_text())
        dt = float(meta.get("dt", dt))
        if "time_budget" in meta:
            metrics.time_budget = float(meta["time_budget"])
        avg = float(meta.get("avg_decision_time", 0.0))
        if avg > 0.0:
            decision_times = [avg]
    result = episode_result(events, decision_times, metrics, dt=dt)
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simrun",
        description="Closed-loop traffic simulation runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario")
    run_p.add_argument("--config", required=True, help="scenario TOML file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override run.seed")
    run_p.add_argument("--set", dest="overrides", action="append",
                       default=[], metavar="SECTION.KEY=VALUE",
                       help="override any scalar config value")
    run_p.add_argument("--batch", type=int, default=1,
                       help="run N episodes with seeds seed..seed+N-1")
    run_p.add_argument("--out", default=None,
                       help="output root (default $SIM_OUT_DIR or ./out)")

    render_p = sub.add_parser("render", help="draw frames and plots")
    render_p.add_argument("log_dir", help="episode output directory")
    render_p.add_argument("--out", default=None,
                          help="destination (default: the log directory)")
    render_p.add_argument("--map", default=None,
                          help="map file (default: from result.json)")
    render_p.add_argument("--plots-only", action="store_true",
                          help="skip frames, draw metric plots only")
    render_p.add_argument("--every", type=int, default=1,
                          help="render every Nth tick")
    render_p.add_argument("--scale", type=float, default=4.0,
                          help="pixels per meter")

    eval_p = sub.add_parser("eval", help="re-score an existing episode log")
    eval_p.add_argument("log_dir", help="episode output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "render":
            return _cmd_render(args)
        return _cmd_eval(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SimError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
