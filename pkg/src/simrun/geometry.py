"""Planar reference-line geometry: line/arc chains, offsets, rectangles.

A ReferenceLine is a C0 chain of constant-curvature segments parameterized by
arc length s. Lateral offset l is positive to the left of the travel direction.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


@dataclass(frozen=True)
class Segment:
    """Constant-curvature piece: a line (curvature 0) or circular arc."""

    x0: float
    y0: float
    heading: float
    length: float
    curvature: float = 0.0

    def point_at(self, u: float) -> tuple[float, float]:
        """Point at local arc length u (may extrapolate beyond [0, length])."""
        k = self.curvature
        if abs(k) < 1e-12:
            return (self.x0 + u * math.cos(self.heading),
                    self.y0 + u * math.sin(self.heading))
        h = self.heading
        # Chord from the start of an arc of curvature k after arc length u.
        return (self.x0 + (math.sin(h + k * u) - math.sin(h)) / k,
                self.y0 - (math.cos(h + k * u) - math.cos(h)) / k)

    def heading_at(self, u: float) -> float:
        return normalize_angle(self.heading + self.curvature * u)

    def end_point(self) -> tuple[float, float]:
        return self.point_at(self.length)

    def offset(self, l: float) -> "Segment":
        """Parallel segment at constant signed lateral offset l (left positive).

        Lines translate; an arc of curvature k maps to curvature k/(1 - k*l)
        with length scaled by (1 - k*l). Requires 1 - k*l > 0.
        """
        nx = -math.sin(self.heading)
        ny = math.cos(self.heading)
        k = self.curvature
        if abs(k) < 1e-12:
            return Segment(self.x0 + l * nx, self.y0 + l * ny,
                           self.heading, self.length, 0.0)
        scale = 1.0 - k * l
        if scale <= 1e-9:
            raise ValueError(f"offset {l} reaches arc center (curvature {k})")
        return Segment(self.x0 + l * nx, self.y0 + l * ny,
                       self.heading, self.length * scale, k / scale)

    def reversed(self) -> "Segment":
        """Same locus traversed backwards."""
        ex, ey = self.end_point()
        return Segment(ex, ey, normalize_angle(self.heading_at(self.length) + math.pi),
                       self.length, -self.curvature)

    def split(self, u: float) -> tuple["Segment", "Segment"]:
        """Split at local arc length u into two segments."""
        px, py = self.point_at(u)
        h = self.heading_at(u)
        return (Segment(self.x0, self.y0, self.heading, u, self.curvature),
                Segment(px, py, h, self.length - u, self.curvature))


class ReferenceLine:
    """Arc-length parameterized chain of segments with a sampled lookup table."""

    SAMPLE_STEP = 0.5

    def __init__(self, segments: list[Segment]):
        if not segments:
            raise ValueError("reference line needs at least one segment")
        self.segments = [s for s in segments if s.length > 1e-12]
        if not self.segments:
            raise ValueError("reference line has zero length")
        cum = [0.0]
        for seg in self.segments:
            cum.append(cum[-1] + seg.length)
        self._cum = cum
        self.length = cum[-1]
        self._build_table()

    def _build_table(self) -> None:
        n = max(2, int(math.ceil(self.length / self.SAMPLE_STEP)) + 1)
        s = np.linspace(0.0, self.length, n)
        xs = np.empty(n)
        ys = np.empty(n)
        for i, si in enumerate(s):
            xs[i], ys[i] = self.point_at(float(si))
        self.sample_s = s
        self.sample_x = xs
        self.sample_y = ys

    def _locate(self, s: float) -> tuple[Segment, float]:
        """Segment containing arc length s plus the local offset within it.

        s outside [0, length] extrapolates along the first/last segment.
        """
        if s <= 0.0:
            return self.segments[0], s
        if s >= self.length:
            return self.segments[-1], s - self._cum[-2]
        i = bisect_right(self._cum, s) - 1
        return self.segments[i], s - self._cum[i]

    def point_at(self, s: float) -> tuple[float, float]:
        seg, u = self._locate(s)
        return seg.point_at(u)

    def heading_at(self, s: float) -> float:
        seg, u = self._locate(s)
        return seg.heading_at(u)

    def curvature_at(self, s: float) -> float:
        seg, _ = self._locate(s)
        return seg.curvature

    def pose_at(self, s: float) -> tuple[float, float, float, float]:
        """(x, y, heading, curvature) at arc length s."""
        seg, u = self._locate(s)
        x, y = seg.point_at(u)
        return x, y, seg.heading_at(u), seg.curvature

    def segment_span(self, s: float) -> tuple[float, float]:
        """[start, end) arc-length interval of the segment containing s."""
        if s >= self.length:
            return self._cum[-2], self.length
        i = max(0, bisect_right(self._cum, max(s, 0.0)) - 1)
        return self._cum[i], self._cum[i + 1]

    def offset_copy(self, l: float) -> "ReferenceLine":
        return ReferenceLine([seg.offset(l) for seg in self.segments])

    def reversed_copy(self) -> "ReferenceLine":
        return ReferenceLine([seg.reversed() for seg in reversed(self.segments)])

    def sub_line(self, s0: float, s1: float) -> "ReferenceLine":
        """Portion between arc lengths s0 < s1 as a new reference line."""
        if not (0.0 <= s0 < s1 <= self.length + 1e-9):
            raise ValueError(f"bad sub-line range [{s0}, {s1}] of {self.length}")
        s1 = min(s1, self.length)
        out: list[Segment] = []
        for i, seg in enumerate(self.segments):
            a, b = self._cum[i], self._cum[i + 1]
            lo, hi = max(a, s0), min(b, s1)
            if hi - lo <= 1e-12:
                continue
            piece = seg
            if lo > a:
                piece = piece.split(lo - a)[1]
            if hi < b:
                piece = piece.split(hi - lo)[0]
            out.append(piece)
        return ReferenceLine(out)

    @staticmethod
    def concat(lines: list["ReferenceLine"]) -> "ReferenceLine":
        segs: list[Segment] = []
        for ln in lines:
            segs.extend(ln.segments)
        return ReferenceLine(segs)

    def end_gap_to(self, other: "ReferenceLine") -> float:
        """Distance from this line's end to the other line's start."""
        ex, ey = self.point_at(self.length)
        sx, sy = other.point_at(0.0)
        return math.hypot(ex - sx, ey - sy)


def rectangle_corners(cx: float, cy: float, heading: float,
                      length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, shape (4, 2), counterclockwise."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def rectangles_overlap(a: tuple[float, float, float, float, float],
                       b: tuple[float, float, float, float, float]) -> bool:
    """Separating-axis test between two (cx, cy, heading, length, width) boxes."""
    # Cheap circle reject before the exact test.
    ra = 0.5 * math.hypot(a[3], a[4])
    rb = 0.5 * math.hypot(b[3], b[4])
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return False
    ca = rectangle_corners(*a)
    cb = rectangle_corners(*b)
    for heading in (a[2], b[2]):
        c, s = math.cos(heading), math.sin(heading)
        for ax, ay in ((c, s), (-s, c)):
            pa = ca[:, 0] * ax + ca[:, 1] * ay
            pb = cb[:, 0] * ax + cb[:, 1] * ay
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def polyline_min_distance(ax: np.ndarray, ay: np.ndarray,
                          bx: np.ndarray, by: np.ndarray) -> tuple[float, int, int]:
    """Minimum vertex-to-vertex distance between two sampled polylines.

    Returns (distance, index_a, index_b). Sampling is assumed dense enough
    (sub-meter) that vertex distance approximates curve distance.
    """
    d2 = (ax[:, None] - bx[None, :]) ** 2 + (ay[:, None] - by[None, :]) ** 2
    i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
    return float(math.sqrt(d2[i, j])), int(i), int(j)
