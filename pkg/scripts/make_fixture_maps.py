#!/usr/bin/env python3
"""Generate the bundled OpenDRIVE fixture maps under scenarios/maps/.

The maps only use the supported subset (line/arc geometry, driving lanes,
road/junction links). Floats are written with repr() so chained geometry
stays continuous to double precision.
"""

from __future__ import annotations

import math
import os
import sys
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.dom import minidom

OUT_DIR = os.path.join(os.path.dirname(__file__), "..", "scenarios", "maps")


def f(x: float) -> str:
    return repr(float(x))


@dataclass
class Geom:
    x: float
    y: float
    hdg: float
    length: float
    curvature: float = 0.0

    def end(self) -> tuple[float, float, float]:
        if self.curvature == 0.0:
            return (self.x + self.length * math.cos(self.hdg),
                    self.y + self.length * math.sin(self.hdg),
                    self.hdg)
        k = self.curvature
        h1 = self.hdg + k * self.length
        return (self.x + (math.sin(h1) - math.sin(self.hdg)) / k,
                self.y - (math.cos(h1) - math.cos(self.hdg)) / k,
                h1)


def line_from(x: float, y: float, hdg: float, length: float) -> Geom:
    return Geom(x, y, hdg, length, 0.0)


def arc_from(x: float, y: float, hdg: float, length: float, k: float) -> Geom:
    return Geom(x, y, hdg, length, k)


def chain(*pieces: Geom) -> list[Geom]:
    out = [pieces[0]]
    for nxt in pieces[1:]:
        x, y, h = out[-1].end()
        out.append(Geom(x, y, h, nxt.length, nxt.curvature))
    return out


@dataclass
class LaneSpec:
    lane_id: int
    width: float = 3.5
    type: str = "driving"
    pred: int | None = None
    succ: int | None = None


@dataclass
class SectionSpec:
    s: float
    lanes: list[LaneSpec]


@dataclass
class RoadSpec:
    rid: str
    geoms: list[Geom]
    sections: list[SectionSpec]
    speed: float = 13.89
    junction: str | None = None
    pred: tuple[str, str, str] | None = None  # (elementType, elementId, contactPoint)
    succ: tuple[str, str, str] | None = None

    @property
    def length(self) -> float:
        return sum(g.length for g in self.geoms)


@dataclass
class ConnectionSpec:
    incoming: str
    connecting: str
    contact_point: str
    lane_links: list[tuple[int, int]]


@dataclass
class JunctionSpec:
    jid: str
    connections: list[ConnectionSpec] = field(default_factory=list)


def road_element(spec: RoadSpec) -> ET.Element:
    road = ET.Element("road", {
        "name": f"road{spec.rid}", "id": spec.rid,
        "length": f(spec.length),
        "junction": spec.junction if spec.junction is not None else "-1",
    })
    link = ET.SubElement(road, "link")
    for tag, val in (("predecessor", spec.pred), ("successor", spec.succ)):
        if val is not None:
            etype, eid, cp = val
            attrs = {"elementType": etype, "elementId": eid}
            if etype == "road":
                attrs["contactPoint"] = cp
            ET.SubElement(link, tag, attrs)
    type_el = ET.SubElement(road, "type", {"s": "0.0", "type": "town"})
    ET.SubElement(type_el, "speed", {"max": f(spec.speed), "unit": "m/s"})
    pv = ET.SubElement(road, "planView")
    s = 0.0
    for g in spec.geoms:
        ge = ET.SubElement(pv, "geometry", {
            "s": f(s), "x": f(g.x), "y": f(g.y), "hdg": f(g.hdg),
            "length": f(g.length)})
        if g.curvature == 0.0:
            ET.SubElement(ge, "line")
        else:
            ET.SubElement(ge, "arc", {"curvature": f(g.curvature)})
        s += g.length
    lanes = ET.SubElement(road, "lanes")
    for sec in spec.sections:
        sec_el = ET.SubElement(lanes, "laneSection", {"s": f(sec.s)})
        left = [l for l in sec.lanes if l.lane_id > 0]
        right = [l for l in sec.lanes if l.lane_id < 0]
        for side_name, side in (("left", sorted(left, key=lambda l: -l.lane_id)),
                                ("center", None),
                                ("right", sorted(right, key=lambda l: -l.lane_id))):
            if side_name == "center":
                c = ET.SubElement(sec_el, "center")
                lane_el = ET.SubElement(c, "lane", {"id": "0", "type": "none",
                                                    "level": "false"})
                ET.SubElement(lane_el, "roadMark", {"sOffset": "0.0",
                                                    "type": "broken"})
                continue
            if not side:
                continue
            holder = ET.SubElement(sec_el, side_name)
            for ls in side:
                lane_el = ET.SubElement(holder, "lane", {
                    "id": str(ls.lane_id), "type": ls.type, "level": "false"})
                llink = ET.SubElement(lane_el, "link")
                if ls.pred is not None:
                    ET.SubElement(llink, "predecessor", {"id": str(ls.pred)})
                if ls.succ is not None:
                    ET.SubElement(llink, "successor", {"id": str(ls.succ)})
                ET.SubElement(lane_el, "width", {
                    "sOffset": "0.0", "a": f(ls.width), "b": "0.0",
                    "c": "0.0", "d": "0.0"})
    return road


def write_map(name: str, roads: list[RoadSpec],
              junctions: list[JunctionSpec] | None = None) -> None:
    root = ET.Element("OpenDRIVE")
    ET.SubElement(root, "header", {
        "revMajor": "1", "revMinor": "4", "name": name,
        "version": "1.00", "north": "0.0", "south": "0.0",
        "east": "0.0", "west": "0.0"})
    for spec in roads:
        root.append(road_element(spec))
    for j in junctions or []:
        j_el = ET.SubElement(root, "junction", {"id": j.jid, "name": f"J{j.jid}"})
        for i, conn in enumerate(j.connections):
            c_el = ET.SubElement(j_el, "connection", {
                "id": str(i), "incomingRoad": conn.incoming,
                "connectingRoad": conn.connecting,
                "contactPoint": conn.contact_point})
            for frm, to in conn.lane_links:
                ET.SubElement(c_el, "laneLink", {"from": str(frm), "to": str(to)})
    raw = ET.tostring(root, encoding="unicode")
    pretty = minidom.parseString(raw).toprettyxml(indent="  ")
    path = os.path.join(OUT_DIR, f"{name}.xodr")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(pretty)
    print(f"wrote {path}")


# ---------------------------------------------------------------------------


def make_highway() -> None:
    geoms = chain(line_from(0.0, 0.0, 0.0, 600.0),
                  arc_from(0, 0, 0, 400.0, 1.0 / 1500.0),
                  line_from(0, 0, 0, 500.0))
    lanes = [LaneSpec(-1, 3.75), LaneSpec(-2, 3.75), LaneSpec(-3, 3.75)]
    write_map("highway", [RoadSpec("1", geoms, [SectionSpec(0.0, lanes)],
                                   speed=27.8)])


def make_single_lane() -> None:
    geoms = [line_from(0.0, 0.0, 0.0, 2200.0)]
    write_map("single_lane", [RoadSpec("1", geoms,
                                       [SectionSpec(0.0, [LaneSpec(-1, 3.6)])],
                                       speed=30.0)])


def make_ramp() -> None:
    r1 = RoadSpec("1", [line_from(0, 0, 0, 400.0)],
                  [SectionSpec(0.0, [LaneSpec(-1, succ=-1), LaneSpec(-2, succ=-2)])],
                  speed=25.0, succ=("road", "2", "start"))
    r2 = RoadSpec("2", [line_from(400.0, 0.0, 0.0, 700.0)],
                  [SectionSpec(0.0, [LaneSpec(-1, pred=-1, succ=-1),
                                     LaneSpec(-2, pred=-2, succ=-2),
                                     LaneSpec(-3)]),
                   SectionSpec(300.0, [LaneSpec(-1, pred=-1, succ=-1),
                                       LaneSpec(-2, pred=-2, succ=-2)])],
                  speed=25.0, pred=("road", "1", "end"),
                  succ=("road", "3", "start"))
    r3 = RoadSpec("3", [line_from(1100.0, 0.0, 0.0, 400.0)],
                  [SectionSpec(0.0, [LaneSpec(-1, pred=-1), LaneSpec(-2, pred=-2)])],
                  speed=25.0, pred=("road", "2", "end"))
    write_map("ramp", [r1, r2, r3])


ARMS = {
    "W": {"road": "1", "point": (-15.0, 0.0), "in_h": 0.0, "cp": "end",
          "from": -1, "to": 1},
    "E": {"road": "2", "point": (15.0, 0.0), "in_h": math.pi, "cp": "start",
          "from": 1, "to": -1},
    "N": {"road": "3", "point": (0.0, 15.0), "in_h": -math.pi / 2, "cp": "start",
          "from": 1, "to": -1},
    "S": {"road": "4", "point": (0.0, -15.0), "in_h": math.pi / 2, "cp": "end",
          "from": -1, "to": 1},
}


def make_intersection() -> None:
    arm_lanes = [SectionSpec(0.0, [LaneSpec(1), LaneSpec(-1)])]
    roads = [
        RoadSpec("1", [line_from(-200.0, 0.0, 0.0, 185.0)], arm_lanes,
                 speed=13.89, succ=("junction", "5", "start")),
        RoadSpec("2", [line_from(15.0, 0.0, 0.0, 185.0)], arm_lanes,
                 speed=13.89, pred=("junction", "5", "start")),
        RoadSpec("3", [line_from(0.0, 15.0, math.pi / 2, 185.0)], arm_lanes,
                 speed=13.89, pred=("junction", "5", "start")),
        RoadSpec("4", [line_from(0.0, -200.0, math.pi / 2, 185.0)], arm_lanes,
                 speed=13.89, succ=("junction", "5", "start")),
    ]
    junction = JunctionSpec("5")
    conn_id = 101
    for a_name, a in ARMS.items():
        for b_name, b in ARMS.items():
            if a_name == b_name:
                continue
            out_h = (b["in_h"] + math.pi) % (2 * math.pi)
            turn = math.atan2(math.sin(out_h - a["in_h"]),
                              math.cos(out_h - a["in_h"]))
            ax, ay = a["point"]
            if abs(turn) < 1e-9:  # straight through
                geoms = [line_from(ax, ay, a["in_h"], 30.0)]
                speed = 11.11
            else:
                k = (1.0 / 15.0) if turn > 0 else (-1.0 / 15.0)
                geoms = [arc_from(ax, ay, a["in_h"], 15.0 * math.pi / 2, k)]
                speed = 8.33
            rid = str(conn_id)
            conn_id += 1
            roads.append(RoadSpec(
                rid, geoms,
                [SectionSpec(0.0, [LaneSpec(-1, pred=a["from"], succ=b["to"])])],
                speed=speed, junction="5",
                pred=("road", a["road"], a["cp"]),
                succ=("road", b["road"], b["cp"])))
            junction.connections.append(ConnectionSpec(
                incoming=a["road"], connecting=rid, contact_point="start",
                lane_links=[(a["from"], -1)]))
    write_map("intersection", roads, [junction])


RING_R = 20.0
ZONES = [("E", 0.0, "91"), ("N", math.pi / 2, "92"),
         ("W", math.pi, "93"), ("S", 3 * math.pi / 2, "94")]
HALF_ZONE = math.radians(15.0)


def ring_pose(phi: float) -> tuple[float, float, float]:
    return (RING_R * math.cos(phi), RING_R * math.sin(phi), phi + math.pi / 2)


def ring_arc(phi0: float, phi1: float) -> Geom:
    x, y, h = ring_pose(phi0)
    return arc_from(x, y, h, RING_R * (phi1 - phi0), 1.0 / RING_R)


def make_roundabout() -> None:
    roads: list[RoadSpec] = []
    junctions: list[JunctionSpec] = []
    one_lane = lambda **kw: [SectionSpec(0.0, [LaneSpec(-1, **kw)])]
    ring_ids = {}
    for i, (name, alpha, _) in enumerate(ZONES):
        nxt_alpha = ZONES[(i + 1) % 4][1]
        if nxt_alpha < alpha:
            nxt_alpha += 2 * math.pi
        rid = str(21 + i)
        ring_ids[name] = rid
        roads.append(RoadSpec(
            rid, [ring_arc(alpha + HALF_ZONE, nxt_alpha - HALF_ZONE)],
            one_lane(pred=-1, succ=-1), speed=9.0,
            pred=("junction", ZONES[i][2], "start"),
            succ=("junction", ZONES[(i + 1) % 4][2], "start")))
    for i, (name, alpha, jid) in enumerate(ZONES):
        prev_ring = ring_ids[ZONES[(i - 1) % 4][0]]
        circ_id, exit_id, enter_id = str(31 + 10 * i), str(32 + 10 * i), str(33 + 10 * i)
        earm_id, xarm_id = str(35 + 10 * i), str(36 + 10 * i)
        node_in = alpha - HALF_ZONE
        node_out = alpha + HALF_ZONE
        # Through movement across the zone.
        roads.append(RoadSpec(
            circ_id, [ring_arc(node_in, node_out)],
            one_lane(pred=-1, succ=-1), speed=9.0, junction=jid,
            pred=("road", prev_ring, "end"),
            succ=("road", ring_ids[name], "start")))
        # Exit: straight tangent leaving the ring at the zone entry node.
        ex_x, ex_y, ex_h = ring_pose(node_in)
        roads.append(RoadSpec(
            exit_id, [line_from(ex_x, ex_y, ex_h, 30.0)],
            one_lane(pred=-1, succ=-1), speed=9.0, junction=jid,
            pred=("road", prev_ring, "end"),
            succ=("road", xarm_id, "start")))
        # Entry: straight tangent merging at the zone exit node.
        en_x, en_y, en_h = ring_pose(node_out)
        sx = en_x - 30.0 * math.cos(en_h)
        sy = en_y - 30.0 * math.sin(en_h)
        roads.append(RoadSpec(
            enter_id, [line_from(sx, sy, en_h, 30.0)],
            one_lane(pred=-1, succ=-1), speed=9.0, junction=jid,
            pred=("road", earm_id, "end"),
            succ=("road", ring_ids[name], "start")))
        # Arms.
        ax = sx - 60.0 * math.cos(en_h)
        ay = sy - 60.0 * math.sin(en_h)
        roads.append(RoadSpec(earm_id, [line_from(ax, ay, en_h, 60.0)],
                              one_lane(succ=-1), speed=13.0,
                              succ=("junction", jid, "start")))
        xe_x, xe_y, _ = Geom(ex_x, ex_y, ex_h, 30.0).end()
        roads.append(RoadSpec(xarm_id, [line_from(xe_x, xe_y, ex_h, 60.0)],
                              one_lane(pred=-1), speed=13.0,
                              pred=("junction", jid, "start")))
        junctions.append(JunctionSpec(jid, [
            ConnectionSpec(prev_ring, circ_id, "start", [(-1, -1)]),
            ConnectionSpec(prev_ring, exit_id, "start", [(-1, -1)]),
            ConnectionSpec(earm_id, enter_id, "start", [(-1, -1)]),
        ]))
    write_map("roundabout", roads, junctions)


def make_long_route() -> None:
    geoms = {
        "1": line_from(0.0, 0.0, 0.0, 800.0),
        "2": arc_from(800.0, 0.0, 0.0, 100.0 * math.pi, 1.0 / 100.0),
        "3": line_from(800.0, 200.0, math.pi, 800.0),
        "4": arc_from(0.0, 200.0, math.pi, 100.0 * math.pi, 1.0 / 100.0),
    }
    lanes = [LaneSpec(-1, pred=-1, succ=-1), LaneSpec(-2, pred=-2, succ=-2),
             LaneSpec(-3, pred=-3, succ=-3)]
    roads = []
    order = ["1", "2", "3", "4"]
    for i, rid in enumerate(order):
        roads.append(RoadSpec(
            rid, [geoms[rid]], [SectionSpec(0.0, list(lanes))], speed=22.0,
            pred=("road", order[(i - 1) % 4], "end"),
            succ=("road", order[(i + 1) % 4], "start")))
    write_map("long_route", roads)


def main() -> None:
    os.makedirs(OUT_DIR, exist_ok=True)
    make_highway()
    make_single_lane()
    make_ramp()
    make_intersection()
    make_roundabout()
    make_long_route()


if __name__ == "__main__":
    sys.exit(main())
