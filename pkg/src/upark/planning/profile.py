"""Trapezoidal time parameterization of the drive path plus parking
maneuver into a timestamped reference trajectory.

Speeds ramp at a_max between zero endpoints, capped by v_max and by the
lateral-acceleration curvature limit sqrt(a_lat_max / |kappa|); gear
changes force a stop. Segment times use the harmonic rule
dt = 2*ds / (v_i + v_{i+1}), which integrates constant-acceleration ramps
exactly. Reverse motion carries a negative speed while the pose heading
stays the facing direction.
"""

import math
from dataclasses import dataclass

import numpy as np

from .. import geom

DRIVE = "drive"
PARK = "park"
PIVOT_RATE = 0.5  # rad/s for zero-radius turns in place
DEFAULT_A_LAT = 0.8


@dataclass
class ReferenceTrajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    v: np.ndarray      # signed: negative in reverse
    gear: np.ndarray   # +1 forward, -1 reverse
    phase: np.ndarray  # DRIVE or PARK per sample

    @property
    def duration(self):
        return float(self.t[-1])

    @property
    def terminal_pose(self):
        return np.array([self.x[-1], self.y[-1], self.theta[-1]])

    def lookup(self, tq):
        """Interpolated (x, y, theta, v, gear, phase) at time tq, clamped to
        the trajectory span."""
        if tq <= self.t[0]:
            i, lam = 0, 0.0
        elif tq >= self.t[-1]:
            i, lam = len(self.t) - 1, 0.0
        else:
            i = int(np.searchsorted(self.t, tq, side="right")) - 1
            span = self.t[i + 1] - self.t[i]
            lam = (tq - self.t[i]) / span
        if lam == 0.0:
            return (self.x[i], self.y[i], self.theta[i], self.v[i],
                    int(self.gear[i]), str(self.phase[i]))
        x = self.x[i] + lam * (self.x[i + 1] - self.x[i])
        y = self.y[i] + lam * (self.y[i + 1] - self.y[i])
        th = geom.wrap_angle(self.theta[i]
                             + lam * geom.wrap_angle(self.theta[i + 1] - self.theta[i]))
        v = self.v[i] + lam * (self.v[i + 1] - self.v[i])
        return x, y, th, v, int(self.gear[i]), str(self.phase[i])

    def window(self, t0, n, dt):
        """Reference poses and speeds for the n states following t0 at
        control period dt; pads by clamping past the end."""
        poses = np.empty((n, 3))
        speeds = np.empty(n)
        for k in range(n):
            x, y, th, v, _, _ = self.lookup(t0 + (k + 1) * dt)
            poses[k] = (x, y, th)
            speeds[k] = v
        return poses, speeds

    def rows(self):
        for i in range(len(self.t)):
            yield (self.t[i], self.x[i], self.y[i], self.theta[i], self.v[i],
                   int(self.gear[i]), str(self.phase[i]))


def _curvature_from_headings(headings, ds):
    kappa = np.zeros(len(headings))
    for i in range(len(headings) - 1):
        if ds[i] > 1e-9:
            kappa[i] = geom.wrap_angle(headings[i + 1] - headings[i]) / ds[i]
    if len(headings) > 1:
        kappa[-1] = kappa[-2]
    return kappa


def _profile_group(points, headings, curvatures, v_max, a_max, a_lat_max):
    """Unsigned speeds per sample: zero at both ends, curvature-capped,
    ramped at a_max both directions."""
    m = len(points)
    ds = np.linalg.norm(np.diff(points, axis=0), axis=1)
    pivot = (ds < 1e-9) & (np.abs(np.diff(headings)) > 1e-9)
    v = np.empty(m)
    for i in range(m):
        limit = v_max
        if abs(curvatures[i]) > 1e-9:
            limit = min(limit, math.sqrt(a_lat_max / abs(curvatures[i])))
        v[i] = limit
    for i in range(m - 1):
        if pivot[i]:
            v[i] = 0.0
            v[i + 1] = 0.0
    v[0] = 0.0
    v[-1] = 0.0
    for i in range(m - 1):
        v[i + 1] = min(v[i + 1], math.sqrt(v[i] ** 2 + 2.0 * a_max * ds[i]))
    for i in range(m - 2, -1, -1):
        v[i] = min(v[i], math.sqrt(v[i + 1] ** 2 + 2.0 * a_max * ds[i]))
    return v, ds, pivot


def time_parameterize(smooth_path, maneuver, v_max, a_max,
                      a_lat_max=DEFAULT_A_LAT):
    """ReferenceTrajectory over the drive samples followed by the parking
    maneuver. Gear changes (and the drive-to-park handoff) stop the vehicle;
    timestamps are strictly increasing."""
    groups = []
    if smooth_path is not None and len(smooth_path.samples) > 0:
        ds = np.diff(smooth_path.arclen)
        kappa = _curvature_from_headings(smooth_path.headings, ds)
        groups.append((smooth_path.samples, smooth_path.headings, kappa, 1, DRIVE))
    if maneuver is not None:
        merged = []  # contiguous same-gear runs
        for pts, headings, kappa, gear in maneuver.sample():
            if merged and merged[-1][3] == gear:
                mp, mh, mk, _ = merged[-1]
                merged[-1] = (np.vstack([mp, pts]), np.concatenate([mh, headings]),
                              np.concatenate([mk, kappa]), gear)
            else:
                merged.append((pts, headings, kappa, gear))
        for pts, headings, kappa, gear in merged:
            groups.append((pts, headings, kappa, gear, PARK))

    rows_t = [0.0]
    rows = []
    first = True
    for points, headings, curvatures, gear, phase in groups:
        # drop repeated geometry inside the group
        keep = [0]
        for i in range(1, len(points)):
            j = keep[-1]
            if (np.linalg.norm(points[i] - points[j]) > 1e-9
                    or abs(geom.wrap_angle(headings[i] - headings[j])) > 1e-9):
                keep.append(i)
        points = points[keep]
        headings = headings[keep]
        curvatures = np.asarray(curvatures)[keep]
        if len(points) == 0:
            continue
        v, ds, pivot = _profile_group(points, headings, curvatures,
                                      v_max, a_max, a_lat_max)
        for i in range(len(points)):
            sample = (points[i][0], points[i][1], geom.wrap_angle(headings[i]),
                      gear * v[i], gear, phase)
            if first:
                rows.append(sample)
                first = False
            elif i == 0:
                prev = rows[-1]
                same = (abs(prev[0] - sample[0]) < 1e-9
                        and abs(prev[1] - sample[1]) < 1e-9
                        and abs(geom.wrap_angle(prev[2] - sample[2])) < 1e-9)
                if not same:
                    # discontinuous handoff: cover it at pivot/crawl timing
                    gap = math.hypot(sample[0] - prev[0], sample[1] - prev[1])
                    turn = abs(geom.wrap_angle(sample[2] - prev[2]))
                    dt = max(gap / max(0.1 * v_max, 1e-3), turn / PIVOT_RATE, 1e-3)
                    rows.append(sample)
                    rows_t.append(rows_t[-1] + dt)
            else:
                vsum = v[i - 1] + v[i]
                if ds[i - 1] > 1e-9:
                    dt = 2.0 * ds[i - 1] / max(vsum, 1e-9)
                elif pivot[i - 1]:
                    dt = abs(geom.wrap_angle(headings[i] - headings[i - 1])) / PIVOT_RATE
                else:
                    continue
                rows.append(sample)
                rows_t.append(rows_t[-1] + dt)

    if not rows:
        raise ValueError("nothing to parameterize")
    arr = np.array([r[:4] for r in rows], dtype=float)
    t = np.array(rows_t[:len(rows)])
    return ReferenceTrajectory(
        t=t, x=arr[:, 0], y=arr[:, 1], theta=arr[:, 2], v=arr[:, 3],
        gear=np.array([r[4] for r in rows], dtype=int),
        phase=np.array([r[5] for r in rows]),
    )
