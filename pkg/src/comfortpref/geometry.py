"""Planar polygon helpers for indoor geofencing (coordinates in meters)."""

from __future__ import annotations

from typing import Sequence

Point = tuple[float, float]

_EPS = 1e-9


def polygon_area(polygon: Sequence[Point]) -> float:
    """Unsigned shoelace area of an open ring."""
    total = 0.0
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        total += x1 * y2 - x2 * y1
    return abs(total) / 2.0


def on_segment(px: float, py: float, a: Point, b: Point, eps: float = _EPS) -> bool:
    (ax, ay), (bx, by) = a, b
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    scale = max(1.0, abs(bx - ax) + abs(by - ay))
    if abs(cross) > eps * scale:
        return False
    return (
        min(ax, bx) - eps <= px <= max(ax, bx) + eps
        and min(ay, by) - eps <= py <= max(ay, by) + eps
    )


def contains(polygon: Sequence[Point], x: float, y: float) -> bool:
    """Even-odd containment test; points on the boundary count as inside."""
    n = len(polygon)
    for i in range(n):
        if on_segment(x, y, polygon[i], polygon[(i + 1) % n]):
            return True
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = polygon[i]
        xj, yj = polygon[j]
        if (yi > y) != (yj > y):
            x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < x_cross:
                inside = not inside
        j = i
    return inside


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 > d2) or (d1 < 0 < d2)) and ((d3 > 0 > d4) or (d3 < 0 < d4)):
        return True
    return (
        (d1 == 0 and on_segment(p1[0], p1[1], q1, q2, 0.0))
        or (d2 == 0 and on_segment(p2[0], p2[1], q1, q2, 0.0))
        or (d3 == 0 and on_segment(q1[0], q1[1], p1, p2, 0.0))
        or (d4 == 0 and on_segment(q2[0], q2[1], p1, p2, 0.0))
    )


def is_simple(polygon: Sequence[Point]) -> bool:
    """True when no two non-adjacent edges touch (O(n^2), fine for room outlines)."""
    n = len(polygon)
    if n < 3 or len(set(polygon)) != n:
        return False
    edges = [(polygon[i], polygon[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(*edges[i], *edges[j]):
                return False
    return polygon_area(polygon) > 0.0
