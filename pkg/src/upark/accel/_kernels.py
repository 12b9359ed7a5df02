"""Loop-form implementations of the hot numeric kernels.

Every function here is written in numba-njit-compatible style (plain loops,
math/np scalars only, closures for helpers) so the same source runs either
compiled or interpreted. The accel package decides which. Semantics must stay
bit-compatible with the vectorized numpy twins in _vectorized.py: identical
formulas, identical epsilons, no reassociation tricks.
"""

import math

import numpy as np

EPS = 1e-12


def dtw_accumulate(ax, ay, bx, by):
    """Full-window DTW with Euclidean point cost.

    Returns (total alignment cost, warping path length). Among minimum-cost
    paths the backtrack prefers diagonal, then the (i-1, j) predecessor,
    then (i, j-1).
    """
    n = ax.shape[0]
    m = bx.shape[0]
    acc = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            dx = ax[i] - bx[j]
            dy = ay[i] - by[j]
            c = math.sqrt(dx * dx + dy * dy)
            if i == 0 and j == 0:
                acc[i, j] = c
            elif i == 0:
                acc[i, j] = c + acc[i, j - 1]
            elif j == 0:
                acc[i, j] = c + acc[i - 1, j]
            else:
                best = acc[i - 1, j - 1]
                if acc[i - 1, j] < best:
                    best = acc[i - 1, j]
                if acc[i, j - 1] < best:
                    best = acc[i, j - 1]
                acc[i, j] = c + best
    i = n - 1
    j = m - 1
    steps = 1
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            bi = i - 1
            bj = j - 1
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
                bi = i - 1
                bj = j
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
                bi = i
                bj = j - 1
        elif i > 0:
            bi = i - 1
            bj = j
        else:
            bi = i
            bj = j - 1
        i = bi
        j = bj
        steps += 1
    return acc[n - 1, m - 1], steps


def polyline_min_distances(px, py, qx, qy):
    """Distance from each point to the nearest point of polyline q."""
    p_count = px.shape[0]
    q_count = qx.shape[0]
    out = np.empty(p_count)
    for i in range(p_count):
        best = np.inf
        if q_count == 1:
            ex = px[i] - qx[0]
            ey = py[i] - qy[0]
            best = ex * ex + ey * ey
        for s in range(q_count - 1):
            axs = qx[s]
            ays = qy[s]
            dx = qx[s + 1] - axs
            dy = qy[s + 1] - ays
            sq = dx * dx + dy * dy
            if sq <= EPS:
                t = 0.0
            else:
                t = ((px[i] - axs) * dx + (py[i] - ays) * dy) / sq
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            ex = px[i] - (axs + t * dx)
            ey = py[i] - (ays + t * dy)
            d2 = ex * ex + ey * ey
            if d2 < best:
                best = d2
        out[i] = math.sqrt(best)
    return out


def rasterize_polygon(ox, oy, res, width, height, px, py, inflation, out):
    """OR into `out` every cell whose inflated footprint overlaps the polygon.

    A cell is occupied iff its square footprint has positive-area overlap
    with the polygon, or (inflation > 0) the rectangle-to-polygon distance
    is strictly below the inflation radius. Touching contact alone does not
    occupy a cell at inflation 0.
    """
    n = px.shape[0]
    half = 0.5 * res

    def pt_on_seg(x, y, x1, y1, x2, y2):
        dxe = x2 - x1
        dye = y2 - y1
        cross = dxe * (y - y1) - dye * (x - x1)
        scale = abs(dxe) + abs(dye)
        if scale < 1.0:
            scale = 1.0
        if abs(cross) > EPS * scale:
            return False
        dot = (x - x1) * dxe + (y - y1) * dye
        if dot < -EPS:
            return False
        return dot <= dxe * dxe + dye * dye + EPS

    def pip_strict(x, y):
        for k in range(n):
            k2 = k + 1
            if k2 == n:
                k2 = 0
            if pt_on_seg(x, y, px[k], py[k], px[k2], py[k2]):
                return False
        inside = False
        jj = n - 1
        for k in range(n):
            if (py[k] > y) != (py[jj] > y):
                x_int = px[k] + (y - py[k]) * (px[jj] - px[k]) / (py[jj] - py[k])
                if x < x_int:
                    inside = not inside
            jj = k
        return inside

    def proper_cross(p1x, p1y, p2x, p2y, q1x, q1y, q2x, q2y):
        d1x = p2x - p1x
        d1y = p2y - p1y
        d2x = q2x - q1x
        d2y = q2y - q1y
        s1 = d1x * (q1y - p1y) - d1y * (q1x - p1x)
        s2 = d1x * (q2y - p1y) - d1y * (q2x - p1x)
        s3 = d2x * (p1y - q1y) - d2y * (p1x - q1x)
        s4 = d2x * (p2y - q1y) - d2y * (p2x - q1x)
        return (s1 * s2 < -EPS) and (s3 * s4 < -EPS)

    def pt_seg_d2(x, y, x1, y1, x2, y2):
        dx = x2 - x1
        dy = y2 - y1
        sq = dx * dx + dy * dy
        if sq <= EPS:
            t = 0.0
        else:
            t = ((x - x1) * dx + (y - y1) * dy) / sq
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        ex = x - (x1 + t * dx)
        ey = y - (y1 + t * dy)
        return ex * ex + ey * ey

    minx = px[0]
    maxx = px[0]
    miny = py[0]
    maxy = py[0]
    for k in range(1, n):
        if px[k] < minx:
            minx = px[k]
        if px[k] > maxx:
            maxx = px[k]
        if py[k] < miny:
            miny = py[k]
        if py[k] > maxy:
            maxy = py[k]
    pad = inflation + res
    i0 = int(math.floor((minx - pad - ox) / res)) - 1
    i1 = int(math.ceil((maxx + pad - ox) / res)) + 1
    j0 = int(math.floor((miny - pad - oy) / res)) - 1
    j1 = int(math.ceil((maxy + pad - oy) / res)) + 1
    if i0 < 0:
        i0 = 0
    if j0 < 0:
        j0 = 0
    if i1 > width:
        i1 = width
    if j1 > height:
        j1 = height
    infl2 = inflation * inflation

    for jy in range(j0, j1):
        cy = oy + (jy + 0.5) * res
        for ix in range(i0, i1):
            if out[jy, ix]:
                continue
            cx = ox + (ix + 0.5) * res
            rx0 = cx - half
            rx1 = cx + half
            ry0 = cy - half
            ry1 = cy + half
            overlap = False
            # rect corner strictly inside polygon
            if pip_strict(rx0, ry0) or pip_strict(rx1, ry0) or \
               pip_strict(rx1, ry1) or pip_strict(rx0, ry1):
                overlap = True
            # polygon vertex strictly inside rect
            if not overlap:
                for k in range(n):
                    if rx0 + EPS < px[k] < rx1 - EPS and ry0 + EPS < py[k] < ry1 - EPS:
                        overlap = True
                        break
            # proper edge crossings
            if not overlap:
                for k in range(n):
                    k2 = k + 1
                    if k2 == n:
                        k2 = 0
                    if proper_cross(rx0, ry0, rx1, ry0, px[k], py[k], px[k2], py[k2]) or \
                       proper_cross(rx1, ry0, rx1, ry1, px[k], py[k], px[k2], py[k2]) or \
                       proper_cross(rx1, ry1, rx0, ry1, px[k], py[k], px[k2], py[k2]) or \
                       proper_cross(rx0, ry1, rx0, ry0, px[k], py[k], px[k2], py[k2]):
                        overlap = True
                        break
            occupied = overlap
            if not occupied and inflation > 0.0:
                best = np.inf
                for k in range(n):
                    k2 = k + 1
                    if k2 == n:
                        k2 = 0
                    d2 = pt_seg_d2(rx0, ry0, px[k], py[k], px[k2], py[k2])
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(rx1, ry0, px[k], py[k], px[k2], py[k2])
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(rx1, ry1, px[k], py[k], px[k2], py[k2])
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(rx0, ry1, px[k], py[k], px[k2], py[k2])
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(px[k], py[k], rx0, ry0, rx1, ry0)
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(px[k], py[k], rx1, ry0, rx1, ry1)
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(px[k], py[k], rx1, ry1, rx0, ry1)
                    if d2 < best:
                        best = d2
                    d2 = pt_seg_d2(px[k], py[k], rx0, ry1, rx0, ry0)
                    if d2 < best:
                        best = d2
                if best < infl2:
                    occupied = True
            if occupied:
                out[jy, ix] = True


def mpc_rollout_cost(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv, ww, wterm, dt):
    """Tracking cost of a command sequence under exact unicycle steps.

    u is (N, 2) commands [v, omega]; refs is (N, 3) target poses for the
    states the commands produce. Increment penalties couple u[k] to u[k-1]
    with (prev_v, prev_w) ahead of the horizon.
    """
    n = u.shape[0]
    two_pi = 2.0 * math.pi
    x = x0
    y = y0
    th = th0
    pv = prev_v
    pw = prev_w
    cost = 0.0
    for k in range(n):
        v = u[k, 0]
        w = u[k, 1]
        th2 = th + w * dt
        if abs(w) < 1e-9:
            x = x + v * math.cos(th) * dt
            y = y + v * math.sin(th) * dt
        else:
            r = v / w
            x = x + r * (math.sin(th2) - math.sin(th))
            y = y + r * (math.cos(th) - math.cos(th2))
        th = th2
        dxp = x - refs[k, 0]
        dyp = y - refs[k, 1]
        dth = (th - refs[k, 2] + math.pi) % two_pi - math.pi
        dv = v - pv
        dw = w - pw
        cost += wp * (dxp * dxp + dyp * dyp) + wth * dth * dth \
            + wv * dv * dv + ww * dw * dw
        if k == n - 1:
            cost += wterm * (dxp * dxp + dyp * dyp)
        pv = v
        pw = w
    return cost


def mpc_rollout_grad(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv, ww, wterm, dt, grad):
    """Cost and its exact gradient wrt the command sequence (adjoint pass).

    Fills grad (N, 2) in place and returns the cost. Partials follow the
    branch the forward model actually takes, so the gradient matches finite
    differences of mpc_rollout_cost.
    """
    n = u.shape[0]
    two_pi = 2.0 * math.pi
    xs = np.empty(n + 1)
    ys = np.empty(n + 1)
    ths = np.empty(n + 1)
    ax_th = np.empty(n)
    ay_th = np.empty(n)
    ax_v = np.empty(n)
    ay_v = np.empty(n)
    ax_w = np.empty(n)
    ay_w = np.empty(n)
    xs[0] = x0
    ys[0] = y0
    ths[0] = th0
    cost = 0.0
    pv = prev_v
    pw = prev_w
    for k in range(n):
        v = u[k, 0]
        w = u[k, 1]
        th = ths[k]
        th2 = th + w * dt
        if abs(w) < 1e-9:
            sin_t = math.sin(th)
            cos_t = math.cos(th)
            xs[k + 1] = xs[k] + v * cos_t * dt
            ys[k + 1] = ys[k] + v * sin_t * dt
            ax_th[k] = -v * sin_t * dt
            ay_th[k] = v * cos_t * dt
            ax_v[k] = cos_t * dt
            ay_v[k] = sin_t * dt
            ax_w[k] = 0.0
            ay_w[k] = 0.0
        else:
            sin_t = math.sin(th)
            cos_t = math.cos(th)
            sin_t2 = math.sin(th2)
            cos_t2 = math.cos(th2)
            r = v / w
            xs[k + 1] = xs[k] + r * (sin_t2 - sin_t)
            ys[k + 1] = ys[k] + r * (cos_t - cos_t2)
            ax_th[k] = r * (cos_t2 - cos_t)
            ay_th[k] = r * (sin_t2 - sin_t)
            ax_v[k] = (sin_t2 - sin_t) / w
            ay_v[k] = (cos_t - cos_t2) / w
            ax_w[k] = -(v / (w * w)) * (sin_t2 - sin_t) + r * dt * cos_t2
            ay_w[k] = -(v / (w * w)) * (cos_t - cos_t2) + r * dt * sin_t2
        ths[k + 1] = th2
        dxp = xs[k + 1] - refs[k, 0]
        dyp = ys[k + 1] - refs[k, 1]
        dth = (th2 - refs[k, 2] + math.pi) % two_pi - math.pi
        dv = v - pv
        dw = w - pw
        cost += wp * (dxp * dxp + dyp * dyp) + wth * dth * dth \
            + wv * dv * dv + ww * dw * dw
        if k == n - 1:
            cost += wterm * (dxp * dxp + dyp * dyp)
        pv = v
        pw = w

    lam_x = 0.0
    lam_y = 0.0
    lam_th = 0.0
    for k in range(n - 1, -1, -1):
        dxp = xs[k + 1] - refs[k, 0]
        dyp = ys[k + 1] - refs[k, 1]
        dth = (ths[k + 1] - refs[k, 2] + math.pi) % two_pi - math.pi
        gx = 2.0 * wp * dxp
        gy = 2.0 * wp * dyp
        gth = 2.0 * wth * dth
        if k == n - 1:
            gx += 2.0 * wterm * dxp
            gy += 2.0 * wterm * dyp
        lx = lam_x + gx
        ly = lam_y + gy
        lth = lam_th + gth
        grad[k, 0] = ax_v[k] * lx + ay_v[k] * ly
        grad[k, 1] = ax_w[k] * lx + ay_w[k] * ly + dt * lth
        lam_x = lx
        lam_y = ly
        lam_th = ax_th[k] * lx + ay_th[k] * ly + lth

    for k in range(n):
        if k == 0:
            dv = u[0, 0] - prev_v
            dw = u[0, 1] - prev_w
        else:
            dv = u[k, 0] - u[k - 1, 0]
            dw = u[k, 1] - u[k - 1, 1]
        grad[k, 0] += 2.0 * wv * dv
        grad[k, 1] += 2.0 * ww * dw
        if k + 1 < n:
            grad[k, 0] -= 2.0 * wv * (u[k + 1, 0] - u[k, 0])
            grad[k, 1] -= 2.0 * ww * (u[k + 1, 1] - u[k, 1])
    return cost


def make_mpc_descent(rollout_cost, rollout_grad):
    """Build the projected-gradient descent driver over a cost/grad pair.

    A factory so each backend composes its own rollout kernels: pass the
    plain functions for the interpreted path, the compiled ones before
    jitting the returned closure for the numba path. The loop mirrors the
    doubling/halving line search the controller originally ran in Python;
    one call per solve replaces hundreds of kernel dispatches.
    """

    def mpc_descent(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv, ww,
                    wterm, dt, v_max, w_max, dv_max, dw_max, c0, max_iters,
                    backtrack_max, cost_tol, grad, trial):
        n = u.shape[0]
        c = c0
        step = 0.2
        for _ in range(max_iters):
            rollout_grad(x0, y0, th0, u, refs, prev_v, prev_w, wp, wth, wv,
                         ww, wterm, dt, grad)
            improved = False
            improvement = 0.0
            alpha = step
            for bt in range(backtrack_max):
                pv = prev_v
                pw = prev_w
                for k in range(n):
                    tv = u[k, 0] - alpha * grad[k, 0]
                    tw = u[k, 1] - alpha * grad[k, 1]
                    lo = max(-v_max, pv - dv_max)
                    hi = min(v_max, pv + dv_max)
                    tv = min(max(tv, lo), hi)
                    lo = max(-w_max, pw - dw_max)
                    hi = min(w_max, pw + dw_max)
                    tw = min(max(tw, lo), hi)
                    trial[k, 0] = tv
                    trial[k, 1] = tw
                    pv = tv
                    pw = tw
                c_trial = rollout_cost(x0, y0, th0, trial, refs, prev_v,
                                       prev_w, wp, wth, wv, ww, wterm, dt)
                if c_trial < c - 1e-12:
                    improvement = c - c_trial
                    for k in range(n):
                        u[k, 0] = trial[k, 0]
                        u[k, 1] = trial[k, 1]
                    c = c_trial
                    improved = True
                    step = min(alpha * 2.0, 1.0) if bt == 0 else alpha
                    break
                alpha *= 0.5
            if not improved:
                break
            if improvement < cost_tol:
                break
        return c

    return mpc_descent
