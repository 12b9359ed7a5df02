"""Grid-path smoothing: shortcut pruning, per-corner cubic Bezier rounding,
and B-spline re-interpolation into evenly spaced samples.

Corner curves take their tangents along the adjacent polyline edges with
control-arm length min(0.4 * edge, 1.5 m), which makes every join C1 by
construction; straight connectors between corners are degenerate cubics.
If a resampled point lands in an occupied cell the offending corner's arms
are halved (at most 6 times per corner) and the path is rebuilt.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from ..errors import SmoothingInfeasibleError

ARM_EDGE_FRACTION = 0.4
ARM_MAX = 1.5
MAX_SHRINKS = 6
SAMPLE_SPACING = 0.05
# turns smaller than this need no corner curve
MIN_TURN = 1e-9


@dataclass
class SmoothPath:
    segments: list     # (4, 2) cubic Bezier control quadruples, in order
    samples: np.ndarray  # (M, 2) points at <= 0.1 m spacing
    headings: np.ndarray
    arclen: np.ndarray

    def end_heading(self):
        return float(self.headings[-1])


def bezier_point(quad, t):
    t = np.asarray(t, dtype=float)[..., None]
    s = 1.0 - t
    return (s ** 3 * quad[0] + 3 * s ** 2 * t * quad[1]
            + 3 * s * t ** 2 * quad[2] + t ** 3 * quad[3])


def bezier_derivative(quad, t):
    t = np.asarray(t, dtype=float)[..., None]
    s = 1.0 - t
    return 3.0 * (s ** 2 * (quad[1] - quad[0])
                  + 2 * s * t * (quad[2] - quad[1])
                  + t ** 2 * (quad[3] - quad[2]))


def _segment_clear(grid, a, b):
    """Every cell whose interior the segment a-b crosses is free.

    Exact supercover: gather the parameters where the segment crosses grid
    lines, then test the cell at each interval midpoint. Sampling at a fixed
    step can hop over a clipped corner cell that the resampled-path check
    later lands in, which the shrink loop cannot repair on a straight leg.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    crossings = [0.0, 1.0]
    for axis in range(2):
        delta = b[axis] - a[axis]
        if abs(delta) < 1e-12:
            continue
        lo = (a[axis] - grid.origin[axis]) / grid.resolution
        hi = (b[axis] - grid.origin[axis]) / grid.resolution
        first = math.ceil(min(lo, hi))
        last = math.floor(max(lo, hi))
        for k in range(first, last + 1):
            t = (grid.origin[axis] + k * grid.resolution - a[axis]) / delta
            if 0.0 < t < 1.0:
                crossings.append(t)
    crossings.sort()
    for t0, t1 in zip(crossings[:-1], crossings[1:]):
        if t1 - t0 < 1e-12:
            continue
        mid = a + (0.5 * (t0 + t1)) * (b - a)
        if not grid.is_free(grid.world_to_cell(mid)):
            return False
    return True


def _prune(points, grid):
    """Greedy line-of-sight shortcutting of the cell-center polyline."""
    pruned = [points[0]]
    i = 0
    while i < len(points) - 1:
        j = len(points) - 1
        while j > i + 1 and not _segment_clear(grid, points[i], points[j]):
            j -= 1
        pruned.append(points[j])
        i = j
    # drop near-duplicate vertices
    out = [pruned[0]]
    for p in pruned[1:]:
        if np.linalg.norm(p - out[-1]) > 1e-9:
            out.append(p)
    return out


def _line_quad(a, b):
    return np.array([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b])


def _build_segments(vertices, scales):
    """Bezier chain over the pruned polyline.

    Returns (quads, corner_ids) where corner_ids[i] is the vertex index the
    quad rounds, or None for straight connectors.
    """
    n = len(vertices)
    if n == 2:
        return [_line_quad(vertices[0], vertices[1])], [None]
    corners = []
    for i in range(1, n - 1):
        u_in = vertices[i] - vertices[i - 1]
        u_out = vertices[i + 1] - vertices[i]
        turn = abs(math.atan2(u_in[0] * u_out[1] - u_in[1] * u_out[0],
                              u_in @ u_out))
        if turn > MIN_TURN:
            corners.append(i)
    quads = []
    ids = []
    cursor = vertices[0]
    for c in corners:
        v = vertices[c]
        e_in = v - vertices[c - 1]
        e_out = vertices[c + 1] - v
        len_in = np.linalg.norm(e_in)
        len_out = np.linalg.norm(e_out)
        u_in = e_in / len_in
        u_out = e_out / len_out
        scale = scales.get(c, 1.0)
        arm_in = min(ARM_EDGE_FRACTION * len_in, ARM_MAX) * scale
        arm_out = min(ARM_EDGE_FRACTION * len_out, ARM_MAX) * scale
        p0 = v - arm_in * u_in
        quad = np.array([p0, v - 0.5 * arm_in * u_in,
                         v + 0.5 * arm_out * u_out, v + arm_out * u_out])
        if np.linalg.norm(p0 - cursor) > 1e-12:
            quads.append(_line_quad(cursor, p0))
            ids.append(None)
        quads.append(quad)
        ids.append(c)
        cursor = quad[3]
    if np.linalg.norm(vertices[-1] - cursor) > 1e-12:
        quads.append(_line_quad(cursor, vertices[-1]))
        ids.append(None)
    return quads, ids


def _chain_samples(quads):
    """Dense samples along the Bezier chain with per-sample quad index."""
    pts = []
    owner = []
    for qi, quad in enumerate(quads):
        ctrl_len = float(sum(np.linalg.norm(quad[k + 1] - quad[k]) for k in range(3)))
        m = max(3, int(math.ceil(ctrl_len / SAMPLE_SPACING)) + 1)
        sub = bezier_point(quad, np.linspace(0.0, 1.0, m))
        if pts:
            sub = sub[1:]
            m -= 1
        pts.extend(sub)
        owner.extend([qi] * m)
    return np.array(pts), np.array(owner)


def _resample(quads):
    """B-spline re-interpolation of the chain at <= 0.1 m spacing.

    Returns (points, headings, arclen, owner quad per sample).
    """
    dense, owner = _chain_samples(quads)
    d = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    keep = np.concatenate([[True], d > 1e-12])
    dense = dense[keep]
    owner = owner[keep]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    total = s[-1]
    if total < 1e-12 or len(dense) < 4:
        tangent = bezier_derivative(quads[0], np.array([0.0]))[0]
        heading = math.atan2(tangent[1], tangent[0])
        headings = np.full(len(dense), heading)
        return dense, headings, s, owner

    d0 = bezier_derivative(quads[0], np.array([0.0]))[0]
    d1 = bezier_derivative(quads[-1], np.array([1.0]))[0]
    d0 = d0 / np.linalg.norm(d0)
    d1 = d1 / np.linalg.norm(d1)
    spline = make_interp_spline(s, dense, k=3, bc_type=([(1, d0)], [(1, d1)]))
    n = max(2, int(math.ceil(total / SAMPLE_SPACING)) + 1)
    params = np.linspace(0.0, total, n)
    points = spline(params)
    deriv = spline.derivative()(params)
    headings = np.arctan2(deriv[:, 1], deriv[:, 0])
    arclen = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    sample_owner = owner[np.minimum(np.searchsorted(s, params, side="left"),
                                    len(owner) - 1)]
    return points, headings, arclen, sample_owner


def smooth(path, grid, inflation=None):
    """SmoothPath through the grid path's cell centers.

    The inflation the grid was built with already defines collision-freeness
    (a free cell keeps that clearance everywhere in its footprint); the
    parameter is accepted for interface symmetry and not otherwise used.
    """
    points = [grid.cell_center(c) for c in path.cells]
    vertices = _prune(points, grid)
    scales = {}
    shrink_counts = {}
    while True:
        quads, ids = _build_segments(vertices, scales)
        samples, headings, arclen, owner = _resample(quads)
        bad = None
        for i, p in enumerate(samples):
            if not grid.is_free(grid.world_to_cell(p)):
                bad = i
                break
        if bad is None:
            return SmoothPath(quads, samples, headings, arclen)
        # attribute the violation to the nearest corner quad
        qi = owner[bad]
        corner = ids[qi]
        if corner is None:
            neighbors = [ids[j] for j in range(len(ids)) if ids[j] is not None]
            if not neighbors:
                raise SmoothingInfeasibleError(
                    "straight segment passes through an occupied cell")
            corner = min(neighbors, key=lambda c: abs(
                next(j for j in range(len(ids)) if ids[j] == c) - qi))
        count = shrink_counts.get(corner, 0)
        if count >= MAX_SHRINKS:
            raise SmoothingInfeasibleError(
                "corner at vertex %d still collides after %d arm shrinks"
                % (corner, MAX_SHRINKS))
        shrink_counts[corner] = count + 1
        scales[corner] = scales.get(corner, 1.0) * 0.5
