"""Post-hoc visualization: bird's-eye-view frames and metric plots.

Frames use a pinned linear world-to-pixel transform (origin at the top
left, a fixed pixel-per-meter scale) so a logged position can be checked
against rendered pixels exactly. The ego is drawn last in pure red.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle, Polygon  # noqa: E402

from .errors import BadLog  # noqa: E402
from .geometry import rectangle_corners  # noqa: E402
from .road_network import RoadNetwork, parse_opendrive  # noqa: E402

TRAJECTORY_COLUMNS = ["vehicle_id", "t", "x", "y", "heading", "speed"]
LANE_COLOR = "#b0b0b0"
VEHICLE_COLOR = "#4878a8"
EGO_COLOR = "#ff0000"  # pure red, pixel-checkable
DPI = 100


@dataclass
class ViewTransform:
    """Linear map from world meters to image pixels (row 0 at the top)."""

    x0: float
    y1: float
    scale: float
    width_px: int
    height_px: int

    def to_pixel(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.x0) * self.scale, (self.y1 - y) * self.scale

    @property
    def x1(self) -> float:
        return self.x0 + self.width_px / self.scale

    @property
    def y0(self) -> float:
        return self.y1 - self.height_px / self.scale


def fit_view(net: RoadNetwork, margin: float = 15.0,
             scale: float = 4.0, max_px: int = 4000) -> ViewTransform:
    xs: list[float] = []
    ys: list[float] = []
    for uid in sorted(net.lanes):
        ref = net.lane(uid).center
        for s in np.linspace(0.0, ref.length, max(int(ref.length / 5) + 2, 2)):
            x, y = ref.point_at(float(s))
            xs.append(x)
            ys.append(y)
    x0, x1 = min(xs) - margin, max(xs) + margin
    y0, y1 = min(ys) - margin, max(ys) + margin
    scale = min(scale, max_px / max(x1 - x0, 1e-9),
                max_px / max(y1 - y0, 1e-9))
    w = int(math.ceil((x1 - x0) * scale))
    h = int(math.ceil((y1 - y0) * scale))
    return ViewTransform(x0=x0, y1=y1, scale=scale, width_px=w, height_px=h)


def load_trajectory(path) -> dict[float, list[tuple]]:
    """Rows grouped by timestamp, in file order within each group."""
    path = Path(path)
    if not path.is_file():
        raise BadLog(f"trajectory log {path} does not exist")
    frames: dict[float, list[tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BadLog("trajectory log is empty") from None
        if header != TRAJECTORY_COLUMNS:
            raise BadLog(f"trajectory header {header!r}, "
                         f"expected {TRAJECTORY_COLUMNS!r}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRAJECTORY_COLUMNS):
                raise BadLog(f"line {lineno}: expected "
                             f"{len(TRAJECTORY_COLUMNS)} fields")
            try:
                vid = int(row[0])
                t, x, y, heading, speed = (float(c) for c in row[1:])
            except ValueError as exc:
                raise BadLog(f"line {lineno}: {exc}") from None
            frames.setdefault(t, []).append((vid, x, y, heading, speed))
    return frames


def load_events(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise BadLog(f"event log {path} does not exist")
    events = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise BadLog(f"events line {lineno}: {exc}") from None
    return events


def _lane_artists(ax, net: RoadNetwork) -> None:
    for uid in sorted(net.lanes):
        lane = net.lane(uid)
        n = max(int(lane.length / 2) + 2, 2)
        ss = np.linspace(0.0, lane.length, n)
        for side in (-0.5, 0.5):
            edge = lane.center.offset_copy(side * lane.width)
            pts = np.array([edge.point_at(float(s)) for s in ss])
            ax.plot(pts[:, 0], pts[:, 1], color=LANE_COLOR, linewidth=0.6,
                    zorder=1)


def _new_canvas(view: ViewTransform):
    fig = plt.figure(figsize=(view.width_px / DPI, view.height_px / DPI),
                     dpi=DPI)
    ax = fig.add_axes([0.0, 0.0, 1.0, 1.0])
    ax.set_xlim(view.x0, view.x1)
    ax.set_ylim(view.y0, view.y1)
    ax.set_axis_off()
    return fig, ax


def render_frames(net: RoadNetwork, frames: dict[float, list[tuple]],
                  out_dir, ego_id: int = 0, aoi_radius: float = 50.0,
                  every: int = 1, scale: float = 4.0,
                  length: float = 5.0, width: float = 2.0) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    view = fit_view(net, scale=scale)
    count = 0
    for k, t in enumerate(sorted(frames)):
        if k % every:
            continue
        fig, ax = _new_canvas(view)
        _lane_artists(ax, net)
        rows = frames[t]
        ego_row = None
        for vid, x, y, heading, speed in rows:
            if vid == ego_id:
                ego_row = (x, y, heading)
                continue
            corners = rectangle_corners(x, y, heading, length, width)
            ax.add_patch(Polygon(corners, closed=True, color=VEHICLE_COLOR,
                                 zorder=3))
        if ego_row is not None:
            x, y, heading = ego_row
            ax.add_patch(Circle((x, y), aoi_radius, fill=False,
                                edgecolor="#808080", linewidth=0.8,
                                linestyle="--", zorder=2))
            corners = rectangle_corners(x, y, heading, length, width)
            ax.add_patch(Polygon(corners, closed=True, color=EGO_COLOR,
                                 zorder=4))
        fig.savefig(out_dir / f"frame_{count:06d}.png")
        plt.close(fig)
        count += 1
    return count


def render_plots(events: list[dict], out_dir, dt: float = 0.1) -> list[str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = [e for e in events if e["kind"] == "metric_sample"]
    if not samples:
        raise BadLog("no metric samples in the event log")
    ts = np.array([s["tick"] * dt for s in samples])
    fig, axes = plt.subplots(4, 1, figsize=(10, 10), sharex=True)
    axes[0].plot(ts, [s["v"] for s in samples], label="speed")
    axes[0].plot(ts, [s["limit"] for s in samples], linestyle="--",
                 label="limit")
    axes[0].set_ylabel("m/s")
    axes[0].legend(loc="lower right")
    axes[1].plot(ts, [s["jerk"] for s in samples])
    axes[1].set_ylabel("jerk m/s^3")
    axes[2].plot(ts, [s["lat_acc"] for s in samples])
    axes[2].set_ylabel("lat acc m/s^2")
    ttc = [s["ttc"] if s["ttc"] is not None else np.nan for s in samples]
    axes[3].plot(ts, ttc)
    axes[3].set_ylabel("ttc s")
    axes[3].set_xlabel("time s")
    fig.tight_layout()
    path = out_dir / "metrics.png"
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return [str(path)]


def render_log(log_dir, out_dir=None, map_path=None, plots_only: bool = False,
               every: int = 1, scale: float = 4.0) -> dict:
    """Render one episode directory; returns artifact counts."""
    log_dir = Path(log_dir)
    out_dir = Path(out_dir) if out_dir is not None else log_dir
    events = load_events(log_dir / "events.jsonl")
    result_path = log_dir / "result.json"
    meta = {}
    if result_path.is_file():
        try:
            meta = json.loads(result_path.read_text())
        except json.JSONDecodeError as exc:
            raise BadLog(f"result.json: {exc}") from None
    dt = float(meta.get("dt", 0.1))
    out = {"frames": 0, "plots": render_plots(events, out_dir, dt=dt)}
    if plots_only:
        return out
    if map_path is None:
        map_path = meta.get("map")
    if map_path is None:
        raise BadLog("no map path given and result.json has none")
    net = parse_opendrive(str(map_path))
    frames = load_trajectory(log_dir / "trajectory.csv")
    ego_id = next((e["vehicle"] for e in events
                   if e["kind"] == "spawn" and e.get("ego")), 0)
    radius = float(meta.get("aoi_radius", 50.0))
    length = float(meta.get("vehicle_length", 5.0))
    width = float(meta.get("vehicle_width", 2.0))
    out["frames"] = render_frames(net, frames, out_dir / "frames",
                                  ego_id=ego_id, aoi_radius=radius,
                                  every=every, scale=scale, length=length,
                                  width=width)
    return out
