"""Vectorized numpy twins for the batch-geometry kernels.

Same predicates and epsilons as _kernels.py, expressed as array ops. The DTW
and MPC kernels have no vectorized twin (their loops carry dependencies); for
those the fallback runs the kernel source uncompiled.
"""

import numpy as np

from ._kernels import EPS


def _pt_seg_d2(x, y, x1, y1, x2, y2):
    # broadcasting point × segment squared distances
    dx = x2 - x1
    dy = y2 - y1
    sq = dx * dx + dy * dy
    safe = np.where(sq <= EPS, 1.0, sq)
    t = ((x - x1) * dx + (y - y1) * dy) / safe
    t = np.where(sq <= EPS, 0.0, np.clip(t, 0.0, 1.0))
    ex = x - (x1 + t * dx)
    ey = y - (y1 + t * dy)
    return ex * ex + ey * ey


def polyline_min_distances(px, py, qx, qy):
    """Distance from each point to the nearest point of polyline q."""
    if qx.shape[0] == 1:
        return np.sqrt((px - qx[0]) ** 2 + (py - qy[0]) ** 2)
    d2 = _pt_seg_d2(px[:, None], py[:, None],
                    qx[None, :-1], qy[None, :-1],
                    qx[None, 1:], qy[None, 1:])
    return np.sqrt(d2.min(axis=1))


def _on_edge(x, y, x1, y1, x2, y2):
    dxe = x2 - x1
    dye = y2 - y1
    cross = dxe * (y - y1) - dye * (x - x1)
    scale = np.maximum(1.0, np.abs(dxe) + np.abs(dye))
    dot = (x - x1) * dxe + (y - y1) * dye
    return (np.abs(cross) <= EPS * scale) & (dot >= -EPS) & (dot <= dxe * dxe + dye * dye + EPS)


def _pip_strict(x, y, px, py):
    # x, y: (...,); polygon arrays broadcast on a trailing axis
    x1 = px[None, :]
    y1 = py[None, :]
    x2 = np.roll(px, -1)[None, :]
    y2 = np.roll(py, -1)[None, :]
    xe = x[..., None]
    ye = y[..., None]
    on = _on_edge(xe, ye, x1, y1, x2, y2).any(axis=-1)
    yj = np.roll(py, 1)[None, :]
    xj = np.roll(px, 1)[None, :]
    straddle = (y1 > ye) != (yj > ye)
    denom = np.where(straddle, yj - y1, 1.0)
    x_int = x1 + (ye - y1) * (xj - x1) / denom
    crossings = (straddle & (xe < x_int)).sum(axis=-1)
    return (crossings % 2 == 1) & ~on


def _proper_cross(p1x, p1y, p2x, p2y, q1x, q1y, q2x, q2y):
    d1x = p2x - p1x
    d1y = p2y - p1y
    d2x = q2x - q1x
    d2y = q2y - q1y
    s1 = d1x * (q1y - p1y) - d1y * (q1x - p1x)
    s2 = d1x * (q2y - p1y) - d1y * (q2x - p1x)
    s3 = d2x * (p1y - q1y) - d2y * (p1x - q1x)
    s4 = d2x * (p2y - q1y) - d2y * (p2x - q1x)
    return (s1 * s2 < -EPS) & (s3 * s4 < -EPS)


def rasterize_polygon(ox, oy, res, width, height, px, py, inflation, out):
    """OR into `out` every cell whose inflated footprint overlaps the polygon."""
    half = 0.5 * res
    pad = inflation + res
    i0 = max(0, int(np.floor((px.min() - pad - ox) / res)) - 1)
    i1 = min(width, int(np.ceil((px.max() + pad - ox) / res)) + 1)
    j0 = max(0, int(np.floor((py.min() - pad - oy) / res)) - 1)
    j1 = min(height, int(np.ceil((py.max() + pad - oy) / res)) + 1)
    if i0 >= i1 or j0 >= j1:
        return
    ix = np.arange(i0, i1)
    jy = np.arange(j0, j1)
    cx, cy = np.meshgrid(ox + (ix + 0.5) * res, oy + (jy + 0.5) * res)
    cx = cx.ravel()
    cy = cy.ravel()
    m = cx.shape[0]

    corner_dx = np.array([-half, half, half, -half])
    corner_dy = np.array([-half, -half, half, half])
    crx = cx[:, None] + corner_dx[None, :]
    cry = cy[:, None] + corner_dy[None, :]
    overlap = _pip_strict(crx.ravel(), cry.ravel(), px, py).reshape(m, 4).any(axis=1)

    in_rect = ((np.abs(px[None, :] - cx[:, None]) < half - EPS) &
               (np.abs(py[None, :] - cy[:, None]) < half - EPS)).any(axis=1)
    overlap |= in_rect

    # rect edge k runs corner k -> corner (k+1)%4, matching the loop kernel
    ex1 = crx
    ey1 = cry
    ex2 = np.roll(crx, -1, axis=1)
    ey2 = np.roll(cry, -1, axis=1)
    qx1 = px[None, None, :]
    qy1 = py[None, None, :]
    qx2 = np.roll(px, -1)[None, None, :]
    qy2 = np.roll(py, -1)[None, None, :]
    cross = _proper_cross(ex1[:, :, None], ey1[:, :, None],
                          ex2[:, :, None], ey2[:, :, None],
                          qx1, qy1, qx2, qy2)
    overlap |= cross.any(axis=(1, 2))

    occupied = overlap
    if inflation > 0.0:
        d2c = _pt_seg_d2(crx[:, :, None], cry[:, :, None],
                         qx1, qy1, qx2, qy2).min(axis=(1, 2))
        d2v = _pt_seg_d2(px[None, None, :], py[None, None, :],
                         ex1[:, :, None], ey1[:, :, None],
                         ex2[:, :, None], ey2[:, :, None]).min(axis=(1, 2))
        d2 = np.minimum(d2c, d2v)
        occupied = overlap | (d2 < inflation * inflation)

    block = occupied.reshape(jy.shape[0], ix.shape[0])
    out[j0:j1, i0:i1] |= block
