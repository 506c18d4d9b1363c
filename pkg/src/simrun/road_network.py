"""OpenDRIVE-subset map loading and the lane-level connectivity graph.

Supported subset: line and arc plan-view geometry, `driving` lanes, lane
sections, road/junction links, and speed limits. Anything else in the document
is skipped with a logged warning. Lane ids are strings "road.section.lane"
(e.g. "12.0.-1"); all connectivity is expressed in travel direction, so left
lanes (positive OpenDRIVE ids) have their geometry reversed and their links
mirrored.
"""

from __future__ import annotations

import heapq
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import DanglingLink, MalformedDocument, NoRoute, UnsupportedGeometry
from .geometry import ReferenceLine, Segment

log = logging.getLogger(__name__)

DEFAULT_SPEED_LIMIT = 13.89  # m/s, used when the document specifies none

_SPEED_UNITS = {"m/s": 1.0, "ms": 1.0, "km/h": 1.0 / 3.6, "kmh": 1.0 / 3.6,
                "mph": 0.44704}


@dataclass
class Lane:
    """Directed drivable lane with exact center-line geometry."""

    uid: str
    road_id: str
    section_index: int
    lane_id: int
    center: ReferenceLine
    width: float
    speed_limit: float
    junction_id: str | None = None
    left_neighbor: str | None = None
    right_neighbor: str | None = None
    successors: list[str] = field(default_factory=list)
    predecessors: list[str] = field(default_factory=list)
    change_permission: str = "none"  # none | left | right | both

    @property
    def length(self) -> float:
        return self.center.length

    def neighbor(self, side: str) -> str | None:
        return self.left_neighbor if side == "left" else self.right_neighbor


@dataclass(frozen=True)
class Conflict:
    """Point where another junction lane comes within conflict distance."""

    s_here: float
    other: str
    s_other: float


class RoadNetwork:
    def __init__(self) -> None:
        self.lanes: dict[str, Lane] = {}
        self.junctions: dict[str, list[str]] = {}
        self.conflicts: dict[str, list[Conflict]] = {}
        self.bounds: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def lane(self, uid: str) -> Lane:
        try:
            return self.lanes[uid]
        except KeyError:
            raise DanglingLink(f"unknown lane id {uid!r}") from None

    def lanes_of_junction(self, junction_id: str) -> list[str]:
        return self.junctions.get(junction_id, [])


# ---------------------------------------------------------------------------
# Parsing


@dataclass
class _ParsedLane:
    lane_id: int
    type: str
    width: float
    speed: float | None
    pred: int | None
    succ: int | None


@dataclass
class _Section:
    s0: float
    s1: float
    lanes: dict[int, _ParsedLane]


@dataclass
class _Road:
    rid: str
    length: float
    junction: str | None
    ref: ReferenceLine
    sections: list[_Section]
    speed: float
    pred: tuple[str, str, str] | None  # (elementType, elementId, contactPoint)
    succ: tuple[str, str, str] | None


def _parse_float(el: ET.Element, attr: str, ctx: str) -> float:
    raw = el.get(attr)
    if raw is None:
        raise MalformedDocument(f"{ctx}: missing attribute {attr!r}")
    try:
        return float(raw)
    except ValueError:
        raise MalformedDocument(f"{ctx}: bad float {attr}={raw!r}") from None


def _parse_speed(el: ET.Element, ctx: str) -> float:
    unit = el.get("unit", "m/s")
    if unit not in _SPEED_UNITS:
        log.warning("%s: unknown speed unit %r, assuming m/s", ctx, unit)
    return _parse_float(el, "max", ctx) * _SPEED_UNITS.get(unit, 1.0)


def _parse_plan_view(road_el: ET.Element, rid: str) -> ReferenceLine:
    pv = road_el.find("planView")
    if pv is None:
        raise MalformedDocument(f"road {rid}: no planView")
    segments: list[Segment] = []
    for geom in pv.findall("geometry"):
        ctx = f"road {rid} geometry"
        x = _parse_float(geom, "x", ctx)
        y = _parse_float(geom, "y", ctx)
        hdg = _parse_float(geom, "hdg", ctx)
        length = _parse_float(geom, "length", ctx)
        shapes = [c for c in geom if c.tag is not ET.Comment]
        if len(shapes) != 1:
            raise MalformedDocument(f"{ctx}: expected one shape child")
        shape = shapes[0]
        if shape.tag == "line":
            segments.append(Segment(x, y, hdg, length, 0.0))
        elif shape.tag == "arc":
            k = _parse_float(shape, "curvature", ctx)
            segments.append(Segment(x, y, hdg, length, k))
        else:
            raise UnsupportedGeometry(f"road {rid}: geometry <{shape.tag}>")
    if not segments:
        raise MalformedDocument(f"road {rid}: empty planView")
    for a, b in zip(segments, segments[1:]):
        ex, ey = a.end_point()
        if math.hypot(ex - b.x0, ey - b.y0) > 1e-4:
            raise MalformedDocument(f"road {rid}: plan view gap at segment joint")
    return ReferenceLine(segments)


def _parse_link(road_el: ET.Element, which: str) -> tuple[str, str, str] | None:
    link = road_el.find("link")
    if link is None:
        return None
    el = link.find(which)
    if el is None:
        return None
    etype = el.get("elementType", "road")
    eid = el.get("elementId")
    if eid is None:
        raise MalformedDocument(f"road link {which}: missing elementId")
    return etype, eid, el.get("contactPoint", "start")


def _parse_lane(el: ET.Element, ctx: str) -> _ParsedLane:
    lid = int(_parse_float(el, "id", ctx))
    ltype = el.get("type", "none")
    width = 3.5
    widths = el.findall("width")
    if widths:
        width = _parse_float(widths[0], "a", ctx)
        if len(widths) > 1 or any(abs(_parse_float(widths[0], c, ctx)) > 1e-12
                                  for c in ("b", "c", "d") if widths[0].get(c)):
            log.warning("%s lane %d: variable width, using constant a term", ctx, lid)
    speed = None
    sp = el.find("speed")
    if sp is not None:
        speed = _parse_speed(sp, ctx)
    pred = succ = None
    link = el.find("link")
    if link is not None:
        p = link.find("predecessor")
        s = link.find("successor")
        if p is not None:
            pred = int(_parse_float(p, "id", ctx))
        if s is not None:
            succ = int(_parse_float(s, "id", ctx))
    return _ParsedLane(lid, ltype, width, speed, pred, succ)


def _parse_road(road_el: ET.Element) -> _Road:
    rid = road_el.get("id")
    if rid is None:
        raise MalformedDocument("road without id")
    length = _parse_float(road_el, "length", f"road {rid}")
    junction = road_el.get("junction", "-1")
    ref = _parse_plan_view(road_el, rid)
    if abs(ref.length - length) > 0.5:
        log.warning("road %s: declared length %.3f vs plan view %.3f",
                    rid, length, ref.length)
    speed = DEFAULT_SPEED_LIMIT
    type_el = road_el.find("type")
    if type_el is not None:
        sp = type_el.find("speed")
        if sp is not None:
            speed = _parse_speed(sp, f"road {rid}")
    lanes_el = road_el.find("lanes")
    if lanes_el is None:
        raise MalformedDocument(f"road {rid}: no lanes element")
    sections: list[_Section] = []
    sec_els = lanes_el.findall("laneSection")
    if not sec_els:
        raise MalformedDocument(f"road {rid}: no laneSection")
    starts = [_parse_float(el, "s", f"road {rid} laneSection") for el in sec_els]
    for i, sec_el in enumerate(sec_els):
        s0 = starts[i]
        s1 = starts[i + 1] if i + 1 < len(sec_els) else ref.length
        lanes: dict[int, _ParsedLane] = {}
        for side in ("left", "right"):
            side_el = sec_el.find(side)
            if side_el is None:
                continue
            for lane_el in side_el.findall("lane"):
                pl = _parse_lane(lane_el, f"road {rid} section {i}")
                lanes[pl.lane_id] = pl
        sections.append(_Section(s0, s1, lanes))
    for tag in ("elevationProfile", "lateralProfile", "signals", "objects"):
        if road_el.find(tag) is not None:
            log.warning("road %s: ignoring unsupported element <%s>", rid, tag)
    return _Road(rid, length, None if junction == "-1" else junction, ref,
                 sections, speed, _parse_link(road_el, "predecessor"),
                 _parse_link(road_el, "successor"))


def _lane_offsets(section: _Section) -> dict[int, float]:
    """Signed lateral offset of each lane center from the road reference."""
    offsets: dict[int, float] = {}
    for sign in (1, -1):
        acc = 0.0
        ids = sorted((i for i in section.lanes if i * sign > 0), key=abs)
        for lid in ids:
            w = section.lanes[lid].width
            offsets[lid] = sign * (acc + 0.5 * w)
            acc += w
    return offsets


def _uid(rid: str, sec: int, lane: int) -> str:
    return f"{rid}.{sec}.{lane}"


class _Builder:
    def __init__(self, roads: dict[str, _Road],
                 connections: list[dict], junction_ids: list[str]):
        self.roads = roads
        self.connections = connections
        self.junction_ids = junction_ids
        self.net = RoadNetwork()
        self.edges: set[tuple[str, str]] = set()

    # -- lane construction ---------------------------------------------------

    def build_lanes(self) -> None:
        for road in self.roads.values():
            for si, sec in enumerate(road.sections):
                offsets = _lane_offsets(sec)
                for lid, pl in sec.lanes.items():
                    if pl.type != "driving":
                        continue
                    if sec.s1 - sec.s0 <= 1e-9:
                        raise MalformedDocument(
                            f"road {road.rid}: empty lane section {si}")
                    center = road.ref.sub_line(sec.s0, sec.s1).offset_copy(offsets[lid])
                    if lid > 0:
                        center = center.reversed_copy()
                    lane = Lane(
                        uid=_uid(road.rid, si, lid),
                        road_id=road.rid,
                        section_index=si,
                        lane_id=lid,
                        center=center,
                        width=pl.width,
                        speed_limit=pl.speed if pl.speed is not None else road.speed,
                        junction_id=road.junction,
                    )
                    self.net.lanes[lane.uid] = lane
        for lane in self.net.lanes.values():
            road = self.roads[lane.road_id]
            sec = road.sections[lane.section_index]
            k = lane.lane_id
            step = 1 if k > 0 else -1
            # In the travel frame the lane closer to the road center is on the
            # driver's left for both sides (left lanes travel against road s).
            toward_center = k - step if abs(k) > 1 else None
            away = k + step
            for attr, nid in (("left_neighbor", toward_center), ("right_neighbor", away)):
                if nid is None:
                    continue
                npl = sec.lanes.get(nid)
                if npl is not None and npl.type == "driving":
                    setattr(lane, attr, _uid(lane.road_id, lane.section_index, nid))

    # -- link resolution -----------------------------------------------------

    def _require(self, rid: str, sec: int, lid: int, ctx: str) -> str | None:
        road = self.roads.get(rid)
        if road is None:
            raise DanglingLink(f"{ctx}: road {rid!r} does not exist")
        if not (0 <= sec < len(road.sections)):
            raise DanglingLink(f"{ctx}: road {rid} has no section {sec}")
        pl = road.sections[sec].lanes.get(lid)
        if pl is None:
            raise DanglingLink(f"{ctx}: road {rid} section {sec} has no lane {lid}")
        if pl.type != "driving":
            log.warning("%s: target lane %s.%d.%d is not a driving lane, "
                        "link skipped", ctx, rid, sec, lid)
            return None
        return _uid(rid, sec, lid)

    def _add_edge(self, a: str | None, b: str | None) -> None:
        if a is not None and b is not None:
            self.edges.add((a, b))

    def _entry_lane(self, rid: str, lid: int, ctx: str) -> str | None:
        """Lane of road rid whose travel starts at the given contact point."""
        road = self.roads.get(rid)
        if road is None:
            raise DanglingLink(f"{ctx}: road {rid!r} does not exist")
        sec = 0 if lid < 0 else len(road.sections) - 1
        return self._require(rid, sec, lid, ctx)

    def _exit_lane(self, rid: str, lid: int, ctx: str) -> str | None:
        """Lane of road rid whose travel ends at the given contact point."""
        road = self.roads.get(rid)
        if road is None:
            raise DanglingLink(f"{ctx}: road {rid!r} does not exist")
        sec = len(road.sections) - 1 if lid < 0 else 0
        return self._require(rid, sec, lid, ctx)

    def _check_side(self, lid: int, want_negative: bool, ctx: str) -> None:
        if (lid < 0) != want_negative:
            side = "right (negative)" if want_negative else "left (positive)"
            raise DanglingLink(f"{ctx}: lane {lid} should be a {side} lane "
                               f"for this contact point")

    def link_within_road(self, road: _Road) -> None:
        # Inner section boundaries: lane-level links run in road s-direction,
        # so a left lane's travel successor is its s-direction predecessor.
        for si, sec in enumerate(road.sections):
            for lid, pl in sec.lanes.items():
                if pl.type != "driving":
                    continue
                here = _uid(road.rid, si, lid)
                ctx = f"road {road.rid} section {si} lane {lid}"
                if lid < 0 and pl.succ is not None and si + 1 < len(road.sections):
                    self._add_edge(here, self._require(road.rid, si + 1, pl.succ, ctx))
                if lid > 0 and pl.pred is not None and si > 0:
                    self._add_edge(here, self._require(road.rid, si - 1, pl.pred, ctx))

    def link_across_roads(self, road: _Road) -> None:
        last = len(road.sections) - 1
        # contactPoint "start" keeps the t-axis orientation across the joint
        # (lane id signs preserved); "end" flips it. Flow direction then
        # follows from the lane side.
        if road.succ is not None and road.succ[0] == "road":
            _, target, cp = road.succ
            for lid, pl in road.sections[last].lanes.items():
                if pl.type != "driving" or pl.succ is None:
                    continue
                ctx = f"road {road.rid} lane {lid} successor"
                self._check_side(pl.succ, (lid < 0) == (cp == "start"), ctx)
                if lid < 0:  # our flow exits into the target road
                    self._add_edge(_uid(road.rid, last, lid),
                                   self._entry_lane(target, pl.succ, ctx))
                else:  # target road's flow enters our left lane
                    self._add_edge(self._exit_lane(target, pl.succ, ctx),
                                   _uid(road.rid, last, lid))
        if road.pred is not None and road.pred[0] == "road":
            _, target, cp = road.pred
            for lid, pl in road.sections[0].lanes.items():
                if pl.type != "driving" or pl.pred is None:
                    continue
                ctx = f"road {road.rid} lane {lid} predecessor"
                self._check_side(pl.pred, (lid < 0) == (cp == "end"), ctx)
                if lid < 0:  # target road's flow enters our right lane
                    self._add_edge(self._exit_lane(target, pl.pred, ctx),
                                   _uid(road.rid, 0, lid))
                else:  # our left lane exits into the target road
                    self._add_edge(_uid(road.rid, 0, lid),
                                   self._entry_lane(target, pl.pred, ctx))

    def link_junctions(self) -> None:
        for conn in self.connections:
            jid = conn["junction"]
            inc, cr, cp = conn["incomingRoad"], conn["connectingRoad"], conn["contactPoint"]
            ctx = f"junction {jid} connection {inc}->{cr}"
            incoming = self.roads.get(inc)
            connecting = self.roads.get(cr)
            if incoming is None:
                raise DanglingLink(f"{ctx}: incoming road {inc!r} does not exist")
            if connecting is None:
                raise DanglingLink(f"{ctx}: connecting road {cr!r} does not exist")
            inc_last = len(incoming.sections) - 1
            for from_id, to_id in conn["laneLinks"]:
                self._check_side(to_id, cp == "start", ctx)
                if from_id < 0:
                    frm = self._require(inc, inc_last, from_id, ctx)
                else:
                    frm = self._require(inc, 0, from_id, ctx)
                to = self._entry_lane(cr, to_id, ctx)
                self._add_edge(frm, to)

    def finish(self) -> RoadNetwork:
        net = self.net
        for a, b in self.edges:
            if a in net.lanes and b in net.lanes:
                la, lb = net.lanes[a], net.lanes[b]
                if b not in la.successors:
                    la.successors.append(b)
                if a not in lb.predecessors:
                    lb.predecessors.append(a)
        for lane in net.lanes.values():
            lane.successors.sort()
            lane.predecessors.sort()
            if lane.junction_id is not None:
                lane.change_permission = "none"
            else:
                has_l = lane.left_neighbor is not None
                has_r = lane.right_neighbor is not None
                lane.change_permission = ("both" if has_l and has_r else
                                          "left" if has_l else
                                          "right" if has_r else "none")
        all_jids = set(self.junction_ids)
        all_jids.update(ln.junction_id for ln in net.lanes.values()
                        if ln.junction_id is not None)
        for jid in sorted(all_jids):
            net.junctions[jid] = sorted(
                u for u, ln in net.lanes.items() if ln.junction_id == jid)
        self._check_continuity(net)
        self._compute_bounds(net)
        _compute_conflicts(net)
        return net

    @staticmethod
    def _check_continuity(net: RoadNetwork) -> None:
        for lane in net.lanes.values():
            segs = lane.center.segments
            for a, b in zip(segs, segs[1:]):
                ex, ey = a.end_point()
                if math.hypot(ex - b.x0, ey - b.y0) > 1e-6:
                    raise MalformedDocument(
                        f"lane {lane.uid}: center line discontinuity")

    @staticmethod
    def _compute_bounds(net: RoadNetwork) -> None:
        if not net.lanes:
            return
        xs = np.concatenate([ln.center.sample_x for ln in net.lanes.values()])
        ys = np.concatenate([ln.center.sample_y for ln in net.lanes.values()])
        net.bounds = (float(xs.min()), float(ys.min()),
                      float(xs.max()), float(ys.max()))


CONFLICT_DISTANCE = 2.0  # m between lane centers to count as conflicting
# Streams that split from a common predecessor separate slowly (roughly
# s^2/2R between a tangent and its arc), so the shared stub is ignored until
# both are this far in; they are sequential traffic, not a crossing.
_DIVERGE_SKIP = 12.0


def _compute_conflicts(net: RoadNetwork) -> None:
    net.conflicts = {uid: [] for uid in net.lanes}
    for jid, lane_ids in net.junctions.items():
        for i, ua in enumerate(lane_ids):
            for ub in lane_ids[i + 1:]:
                la, lb = net.lanes[ua], net.lanes[ub]
                if ub in la.successors or ua in lb.successors:
                    continue
                dx = la.center.sample_x[:, None] - lb.center.sample_x[None, :]
                dy = la.center.sample_y[:, None] - lb.center.sample_y[None, :]
                d2 = dx * dx + dy * dy
                if set(la.predecessors) & set(lb.predecessors):
                    mask = ((la.center.sample_s[:, None] < _DIVERGE_SKIP) &
                            (lb.center.sample_s[None, :] < _DIVERGE_SKIP))
                    d2 = np.where(mask, np.inf, d2)
                ia, ib = np.unravel_index(int(np.argmin(d2)), d2.shape)
                if math.sqrt(float(d2[ia, ib])) >= CONFLICT_DISTANCE:
                    continue
                sa = float(la.center.sample_s[ia])
                sb = float(lb.center.sample_s[ib])
                net.conflicts[ua].append(Conflict(sa, ub, sb))
                net.conflicts[ub].append(Conflict(sb, ua, sa))
    for lst in net.conflicts.values():
        lst.sort(key=lambda c: (c.s_here, c.other))


def parse_opendrive(source: str) -> RoadNetwork:
    """Parse an OpenDRIVE document (path or XML text) into a RoadNetwork."""
    if "<" not in source:
        if not os.path.exists(source):
            raise MalformedDocument(f"no such map file: {source}")
        with open(source, encoding="utf-8") as fh:
            source = fh.read()
    try:
        root = ET.fromstring(source)
    except ET.ParseError as exc:
        raise MalformedDocument(f"not valid XML: {exc}") from None
    if root.tag != "OpenDRIVE":
        raise MalformedDocument(f"root element is <{root.tag}>, expected <OpenDRIVE>")
    roads: dict[str, _Road] = {}
    for road_el in root.findall("road"):
        road = _parse_road(road_el)
        if road.rid in roads:
            raise MalformedDocument(f"duplicate road id {road.rid}")
        roads[road.rid] = road
    connections: list[dict] = []
    junction_ids: list[str] = []
    for j_el in root.findall("junction"):
        jid = j_el.get("id")
        if jid is None:
            raise MalformedDocument("junction without id")
        junction_ids.append(jid)
        for c_el in j_el.findall("connection"):
            links = [(int(_parse_float(l, "from", f"junction {jid}")),
                      int(_parse_float(l, "to", f"junction {jid}")))
                     for l in c_el.findall("laneLink")]
            connections.append({
                "junction": jid,
                "incomingRoad": c_el.get("incomingRoad"),
                "connectingRoad": c_el.get("connectingRoad"),
                "contactPoint": c_el.get("contactPoint", "start"),
                "laneLinks": links,
            })
    builder = _Builder(roads, connections, junction_ids)
    builder.build_lanes()
    for road in roads.values():
        builder.link_within_road(road)
        builder.link_across_roads(road)
    builder.link_junctions()
    return builder.finish()


def route(net: RoadNetwork, origin: str, destination: str) -> list[str]:
    """Minimal-hop lane path from origin to destination.

    Edges are travel successors plus lateral neighbors permitted by
    change_permission. Ties resolve to the lexicographically smallest path,
    so results are deterministic.
    """
    net.lane(origin)
    net.lane(destination)
    heap: list[tuple[int, tuple[str, ...]]] = [(0, (origin,))]
    seen: set[str] = set()
    while heap:
        hops, path = heapq.heappop(heap)
        node = path[-1]
        if node == destination:
            return list(path)
        if node in seen:
            continue
        seen.add(node)
        lane = net.lanes[node]
        nxt = list(lane.successors)
        if lane.change_permission in ("left", "both") and lane.left_neighbor:
            nxt.append(lane.left_neighbor)
        if lane.change_permission in ("right", "both") and lane.right_neighbor:
            nxt.append(lane.right_neighbor)
        for n in nxt:
            if n not in seen:
                heapq.heappush(heap, (hops + 1, path + (n,)))
    raise NoRoute(f"no path from {origin!r} to {destination!r}")


def is_lateral_hop(net: RoadNetwork, a: str, b: str) -> bool:
    lane = net.lane(a)
    return b in (lane.left_neighbor, lane.right_neighbor)
