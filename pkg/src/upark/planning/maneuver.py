"""Final parking maneuver: straight stub, tangent circular arc, straight
run along the slot axis to the slot center.

The arc has radius exactly r_min and is tangent to both the approach
heading ray and the slot center axis (a corner fillet between the two
lines); the tangent length from the line intersection is
r_min * |tan(turn / 2)|. A negative stub means the vehicle first backs up
along its heading; an arc exit past the slot center is allowed up to a
quarter slot length and driven in reverse. Headings are always the facing
direction, so reverse segments keep the heading of the forward axis they
move along.
"""

import math
from dataclasses import dataclass

import numpy as np

from .. import geom
from ..errors import ManeuverInfeasibleError
from ..world import Pose2D

ALIGN_ANGLE = 1e-3
ALIGN_LATERAL = 1e-3
APPROACH_LIMIT = 8.0
SAMPLE_SPACING = 0.05
# pivot rate used when r_min = 0 degenerates the arc to a turn in place
FORWARD = 1
REVERSE = -1


@dataclass
class LineSegment:
    start: np.ndarray
    end: np.ndarray
    heading: float   # facing direction, constant along the segment
    gear: int

    def length(self):
        return float(np.linalg.norm(self.end - self.start))


@dataclass
class ArcSegment:
    center: np.ndarray
    radius: float
    angle0: float    # polar angle of the entry point on the circle
    angle1: float    # polar angle of the exit point; sweep = angle1 - angle0
    direction: int   # +1 counter-clockwise, -1 clockwise
    gear: int

    def length(self):
        return self.radius * abs(self.angle1 - self.angle0)

    def point(self, angle):
        return self.center + self.radius * np.array([math.cos(angle), math.sin(angle)])

    def heading(self, angle):
        return geom.wrap_angle(angle + self.direction * 0.5 * math.pi)


@dataclass
class ParkingManeuver:
    segments: list
    terminal_pose: Pose2D

    def sample(self, spacing=SAMPLE_SPACING):
        """Per-segment arrays (points, headings, curvatures, gear)."""
        out = []
        for seg in self.segments:
            if isinstance(seg, LineSegment):
                n = max(2, int(math.ceil(seg.length() / spacing)) + 1)
                ts = np.linspace(0.0, 1.0, n)
                pts = seg.start[None, :] + ts[:, None] * (seg.end - seg.start)[None, :]
                headings = np.full(n, seg.heading)
                curvatures = np.zeros(n)
            else:
                sweep = seg.angle1 - seg.angle0
                n = max(2, int(math.ceil(seg.length() / spacing)) + 1)
                angles = seg.angle0 + np.linspace(0.0, 1.0, n) * sweep
                pts = seg.center[None, :] + seg.radius * np.column_stack(
                    [np.cos(angles), np.sin(angles)])
                headings = np.array([seg.heading(a) for a in angles])
                curvatures = np.full(n, seg.direction / seg.radius
                                     if seg.radius > 0 else 0.0)
            out.append((pts, headings, curvatures, seg.gear))
        return out


def parking_maneuver(approach, slot, r_min):
    """Arc-line maneuver from the approach pose to the slot center.

    Raises ManeuverInfeasibleError when no tangent arc of radius r_min
    connects the approach heading to the slot axis (antiparallel heading,
    parallel lateral offset) or when the arc exit overshoots the center by
    more than a quarter slot length.
    """
    if slot.occupied:
        raise ValueError("slot %s is occupied" % slot.id)
    p = np.array([approach.x, approach.y])
    c = slot.center
    h = slot.heading
    d_hat = np.array([math.cos(h), math.sin(h)])
    m_hat = np.array([math.cos(approach.theta), math.sin(approach.theta)])
    mouth = c - 0.5 * slot.length * d_hat
    if np.linalg.norm(p - mouth) > APPROACH_LIMIT:
        raise ManeuverInfeasibleError("approach pose too far from the slot mouth")

    turn = geom.wrap_angle(h - approach.theta)
    lateral = abs(_cross(d_hat, c - p))
    segments = []

    if abs(turn) < ALIGN_ANGLE and lateral < ALIGN_LATERAL:
        # already on the axis: pure line
        advance = float((c - p) @ d_hat)
        if abs(advance) > 1e-12:
            gear = FORWARD if advance > 0 else REVERSE
            segments.append(LineSegment(p, c.copy(), h, gear))
        return ParkingManeuver(segments, Pose2D(c[0], c[1], h))

    denom = _cross(m_hat, d_hat)  # sin(turn)
    if abs(denom) < 1e-9:
        if abs(abs(turn) - math.pi) < 1e-6:
            raise ManeuverInfeasibleError("approach heading opposes the slot axis")
        raise ManeuverInfeasibleError("approach parallel to the slot axis with offset")

    s = _cross(c - p, d_hat) / denom   # ray parameter of the line intersection
    u = _cross(c - p, m_hat) / denom   # axis parameter (relative to center)
    x_point = p + s * m_hat
    t_len = r_min * abs(math.tan(0.5 * turn))

    f1 = x_point - t_len * m_hat
    f2 = x_point + t_len * d_hat
    stub = s - t_len
    overshoot = u + t_len  # f2 position along the axis beyond the center

    if overshoot > slot.length / 4.0 + 1e-9:
        raise ManeuverInfeasibleError(
            "arc exit overshoots the slot center by %.2f m" % overshoot)

    if abs(stub) > 1e-9:
        gear = FORWARD if stub > 0 else REVERSE
        segments.append(LineSegment(p, f1.copy(), approach.theta, gear))

    if r_min > 0:
        direction = 1 if turn > 0 else -1
        normal = direction * np.array([-m_hat[1], m_hat[0]])
        center = f1 + r_min * normal
        angle0 = math.atan2(f1[1] - center[1], f1[0] - center[0])
        angle1 = angle0 + turn
        segments.append(ArcSegment(center, r_min, angle0, angle1, direction, FORWARD))
    # r_min = 0: the arc collapses to a pivot at f1 == f2; heading jumps to
    # the axis and the profile stage emits the turn-in-place timing

    run = float((c - f2) @ d_hat)
    if abs(run) > 1e-12:
        gear = FORWARD if run > 0 else REVERSE
        segments.append(LineSegment(f2, c.copy(), h, gear))

    return ParkingManeuver(segments, Pose2D(c[0], c[1], h))


def _cross(a, b):
    return float(a[0] * b[1] - a[1] * b[0])
