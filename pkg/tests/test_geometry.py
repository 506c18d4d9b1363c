import math
import random

import numpy as np
import pytest

from simrun.geometry import (ReferenceLine, Segment, normalize_angle,
                             rectangle_corners, rectangles_overlap)


def test_normalize_angle_wraps():
    assert normalize_angle(0.0) == 0.0
    assert abs(normalize_angle(2 * math.pi) - 0.0) < 1e-12
    assert abs(normalize_angle(3 * math.pi) - math.pi) < 1e-12
    assert abs(normalize_angle(-math.pi) - math.pi) < 1e-12
    rng = random.Random(7)
    for _ in range(200):
        a = rng.uniform(-50, 50)
        w = normalize_angle(a)
        assert -math.pi < w <= math.pi
        assert abs(math.sin(w) - math.sin(a)) < 1e-9
        assert abs(math.cos(w) - math.cos(a)) < 1e-9


def test_arc_matches_circle_parameterization():
    # Independent circle check: left arc of radius R starting at origin
    # heading +x has center (0, R).
    R = 25.0
    seg = Segment(0.0, 0.0, 0.0, R * math.pi, 1.0 / R)
    for u in np.linspace(0, seg.length, 50):
        phi = u / R
        ex = R * math.sin(phi)
        ey = R * (1 - math.cos(phi))
        x, y = seg.point_at(float(u))
        assert math.hypot(x - ex, y - ey) < 1e-9
        assert abs(normalize_angle(seg.heading_at(float(u)) - phi)) < 1e-12


def test_offset_is_exact_normal_translation():
    rng = random.Random(3)
    for _ in range(20):
        k = rng.uniform(-0.05, 0.05)
        seg = Segment(rng.uniform(-10, 10), rng.uniform(-10, 10),
                      rng.uniform(-math.pi, math.pi), rng.uniform(5, 40), k)
        l = rng.uniform(-3, 3)
        off = seg.offset(l)
        # Offset arc length reparameterizes: point at u*(1-k*l) on the offset
        # segment must equal base point at u plus l along the base normal.
        for u in np.linspace(0, seg.length, 9):
            x, y = seg.point_at(float(u))
            h = seg.heading_at(float(u))
            ex = x - l * math.sin(h)
            ey = y + l * math.cos(h)
            u_off = float(u) * (1 - k * l)
            ox, oy = off.point_at(u_off)
            assert math.hypot(ox - ex, oy - ey) < 1e-9


def test_reversed_segment_covers_same_points():
    seg = Segment(2.0, -1.0, 0.4, 30.0, 0.02)
    rev = seg.reversed()
    for u in np.linspace(0, seg.length, 11):
        a = seg.point_at(float(u))
        b = rev.point_at(seg.length - float(u))
        assert math.hypot(a[0] - b[0], a[1] - b[1]) < 1e-9
    assert abs(normalize_angle(rev.heading_at(seg.length) - seg.heading - math.pi)) < 1e-9


def three_segment_line() -> ReferenceLine:
    s1 = Segment(0, 0, 0, 40, 0)
    x, y = s1.end_point()
    s2 = Segment(x, y, 0, 20 * math.pi / 2, 1 / 20)
    x2, y2 = s2.end_point()
    s3 = Segment(x2, y2, s2.heading_at(s2.length), 30, 0)
    return ReferenceLine([s1, s2, s3])


def test_reference_line_lookup_and_spans():
    rl = three_segment_line()
    assert abs(rl.length - (40 + 10 * math.pi + 30)) < 1e-9
    assert rl.curvature_at(10) == 0.0
    assert rl.curvature_at(45) == pytest.approx(0.05)
    assert rl.curvature_at(rl.length - 5) == 0.0
    lo, hi = rl.segment_span(45.0)
    assert lo == pytest.approx(40.0) and hi == pytest.approx(40 + 10 * math.pi)
    x, y = rl.point_at(40.0)
    assert (x, y) == pytest.approx((40.0, 0.0))


def test_sub_line_matches_parent():
    rl = three_segment_line()
    sub = rl.sub_line(35.0, 80.0)
    assert abs(sub.length - 45.0) < 1e-9
    for s in np.linspace(0, sub.length, 17):
        a = sub.point_at(float(s))
        b = rl.point_at(35.0 + float(s))
        assert math.hypot(a[0] - b[0], a[1] - b[1]) < 1e-9


def test_concat_and_end_gap():
    rl = three_segment_line()
    a = rl.sub_line(0, 50)
    b = rl.sub_line(50, rl.length)
    assert a.end_gap_to(b) < 1e-9
    joined = ReferenceLine.concat([a, b])
    assert abs(joined.length - rl.length) < 1e-9
    p1 = joined.point_at(71.0)
    p2 = rl.point_at(71.0)
    assert math.hypot(p1[0] - p2[0], p1[1] - p2[1]) < 1e-9


def test_rectangle_corners_axis_aligned():
    c = rectangle_corners(1.0, 2.0, 0.0, 4.0, 2.0)
    xs = sorted(p[0] for p in c)
    ys = sorted(p[1] for p in c)
    assert xs == pytest.approx([-1, -1, 3, 3])
    assert ys == pytest.approx([1, 1, 3, 3])


def test_rectangles_overlap_cases():
    a = (0.0, 0.0, 0.0, 4.0, 2.0)
    assert rectangles_overlap(a, (3.0, 0.0, 0.0, 4.0, 2.0))  # side by side touch
    assert not rectangles_overlap(a, (10.0, 0.0, 0.0, 4.0, 2.0))
    assert not rectangles_overlap(a, (0.0, 2.5, 0.0, 4.0, 2.0))
    # Rotated corner clip: diagonal box near the corner.
    assert rectangles_overlap(a, (2.4, 1.2, math.pi / 4, 3.0, 1.0))
    # Same centers distance but rotated so the separating axis exists.
    assert not rectangles_overlap((0, 0, 0, 4, 0.5), (0, 1.0, 0, 4, 0.5))


def test_rectangles_overlap_symmetric_random():
    rng = random.Random(11)
    for _ in range(300):
        a = (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3),
             rng.uniform(1, 6), rng.uniform(1, 3))
        b = (rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3),
             rng.uniform(1, 6), rng.uniform(1, 3))
        assert rectangles_overlap(a, b) == rectangles_overlap(b, a)
