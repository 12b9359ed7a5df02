"""Planar geometry primitives: angles, polygons, segment predicates.

Conventions: points are (x, y) in meters, angles in radians normalized to
(-pi, pi]. Polygons are (K, 2) float arrays of vertices in order, implicitly
closed, simple (non-self-intersecting).

Sight-line semantics: touching a polygon only at a vertex, or running along
an edge, does not block visibility; obstruction requires a proper crossing
(intersection point interior to both segments) or an endpoint strictly
inside the polygon.
"""

from __future__ import annotations

import math

import numpy as np

_EPS = 1e-12


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    w = (theta + math.pi) % (2.0 * math.pi) - math.pi
    if w <= -math.pi:
        w = math.pi
    return w


def angle_diff(a: float, b: float) -> float:
    """Shortest signed angular difference a - b, in (-pi, pi]."""
    return wrap_angle(a - b)


def axis_heading_error(theta: float, axis: float) -> float:
    """Absolute heading error against an undirected axis (mod pi)."""
    return min(abs(angle_diff(theta, axis)), abs(angle_diff(theta, axis + math.pi)))


def poly_edges(poly: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (starts, ends) edge arrays for a closed polygon."""
    a = np.asarray(poly, dtype=float)
    return a, np.roll(a, -1, axis=0)


def point_on_segment(p, a, b, eps: float = _EPS) -> bool:
    ax, ay = a
    bx, by = b
    px, py = p
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    if abs(cross) > eps * max(1.0, abs(bx - ax) + abs(by - ay)):
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    if dot < -eps:
        return False
    sq = (bx - ax) ** 2 + (by - ay) ** 2
    return dot <= sq + eps


def point_in_polygon(p, poly: np.ndarray, strict: bool = True) -> bool:
    """Even-odd containment test; with strict=True boundary points are out."""
    px, py = float(p[0]), float(p[1])
    n = len(poly)
    for i in range(n):
        if point_on_segment((px, py), poly[i], poly[(i + 1) % n]):
            return not strict
    inside = False
    j = n - 1
    for i in range(n):
        xi, yi = poly[i]
        xj, yj = poly[j]
        if (yi > py) != (yj > py):
            x_int = xi + (py - yi) * (xj - xi) / (yj - yi)
            if px < x_int:
                inside = not inside
        j = i
    return inside


def segments_properly_cross(p1, p2, q1, q2, eps: float = _EPS) -> bool:
    """True iff the open segments intersect at a point interior to both."""
    d1x, d1y = p2[0] - p1[0], p2[1] - p1[1]
    d2x, d2y = q2[0] - q1[0], q2[1] - q1[1]
    s1 = d1x * (q1[1] - p1[1]) - d1y * (q1[0] - p1[0])
    s2 = d1x * (q2[1] - p1[1]) - d1y * (q2[0] - p1[0])
    s3 = d2x * (p1[1] - q1[1]) - d2y * (p1[0] - q1[0])
    s4 = d2x * (p2[1] - q1[1]) - d2y * (p2[0] - q1[0])
    return (s1 * s2 < -eps) and (s3 * s4 < -eps)


def point_segment_distance(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    sq = dx * dx + dy * dy
    if sq <= _EPS:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / sq
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def point_polygon_distance(p, poly: np.ndarray) -> float:
    """Distance from a point to a polygon region (0 inside or on boundary)."""
    if point_in_polygon(p, poly, strict=False):
        return 0.0
    n = len(poly)
    return min(
        point_segment_distance(p, poly[i], poly[(i + 1) % n]) for i in range(n)
    )


def segment_blocked_by_polygon(p1, p2, poly: np.ndarray) -> bool:
    """Sight-line obstruction test for one polygon (tangency counts as clear)."""
    if point_in_polygon(p1, poly, strict=True) or point_in_polygon(p2, poly, strict=True):
        return True
    n = len(poly)
    for i in range(n):
        if segments_properly_cross(p1, p2, poly[i], poly[(i + 1) % n]):
            return True
    return False


def segments_blocked(starts: np.ndarray, ends: np.ndarray,
                     edge_a: np.ndarray, edge_b: np.ndarray,
                     polys: list[np.ndarray]) -> np.ndarray:
    """Vectorized obstruction test for K sight segments against all edges.

    edge_a/edge_b are the concatenated (E, 2) edge endpoint arrays of polys;
    polys is still needed for the strict endpoint-containment part.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    k = len(starts)
    blocked = np.zeros(k, dtype=bool)
    if len(edge_a):
        d1 = ends - starts                                # (K, 2)
        d2 = edge_b - edge_a                              # (E, 2)
        ra = edge_a[None, :, :] - starts[:, None, :]      # (K, E, 2)
        rb = edge_b[None, :, :] - starts[:, None, :]
        s1 = d1[:, None, 0] * ra[:, :, 1] - d1[:, None, 1] * ra[:, :, 0]
        s2 = d1[:, None, 0] * rb[:, :, 1] - d1[:, None, 1] * rb[:, :, 0]
        pa = starts[:, None, :] - edge_a[None, :, :]
        pb = ends[:, None, :] - edge_a[None, :, :]
        s3 = d2[None, :, 0] * pa[:, :, 1] - d2[None, :, 1] * pa[:, :, 0]
        s4 = d2[None, :, 0] * pb[:, :, 1] - d2[None, :, 1] * pb[:, :, 0]
        cross = (s1 * s2 < -_EPS) & (s3 * s4 < -_EPS)
        blocked |= cross.any(axis=1)
    for i in range(k):
        if blocked[i]:
            continue
        for poly in polys:
            if point_in_polygon(starts[i], poly, strict=True) or \
               point_in_polygon(ends[i], poly, strict=True):
                blocked[i] = True
                break
    return blocked


def points_in_any_polygon(points: np.ndarray, polys: list[np.ndarray]) -> np.ndarray:
    """Strict containment of each point in any of the polygons."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(pts), dtype=bool)
    for i, p in enumerate(pts):
        for poly in polys:
            if point_in_polygon(p, poly, strict=True):
                out[i] = True
                break
    return out


def polygon_is_simple(poly: np.ndarray) -> bool:
    """Reject self-intersecting polygons (adjacent-edge contact allowed)."""
    n = len(poly)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if segments_properly_cross(a1, a2, poly[j], poly[(j + 1) % n]):
                return False
    return True


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
