"""Three-layer UWB/IMU fusion.

Layer 1 gates implausible range jumps and median-filters per-anchor windows.
Layer 2 multilaterates a 2D fix by Gauss-Newton and applies exponential
smoothing. Layer 3 is an innovation-adaptive EKF over [x, y, theta, v]:
unicycle prediction driven by gyro + wheel speed, position update from the
smoothed fix, with the measurement covariance inflated continuously once the
innovation norm exceeds the gate threshold.

The FusionPipeline wraps all three behind a feed-samples/read-state
interface. RawUwbEstimator is the degenerate variant that stops after layer
2 (finite-difference heading/speed), used as a benchmark baseline.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .errors import (ClockSkewError, CollinearAnchorsError,
                     InsufficientAnchorsError)
from .sensors import ImuSample, RangingSample

# process noise per 0.1 s prediction step; iaekf_predict rescales by dt/0.1
# when stepping at a different rate
DEFAULT_Q = np.diag([1e-4, 1e-4, 1e-5, 1e-3])
DEFAULT_R0 = np.diag([0.05 ** 2, 0.05 ** 2])
# the entry heading is surveyed, so theta starts stiff; position innovations
# then cannot crank the heading through the cross-covariance early on
DEFAULT_P0 = np.diag([0.25, 0.25, 1e-4, 0.25])

GN_MAX_ITERS = 25
GN_STEP_TOL = 1e-6
COND_LIMIT = 1e8
RESTART_GRID_STEP = 0.5


@dataclass
class GateConfig:
    tau: float = 0.5
    inflation_exponent: float = 1.0
    # short window so the score tracks burst edges instead of trailing them
    reliability_window: int = 8

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.inflation_exponent < 1:
            raise ValueError("inflation_exponent must be >= 1")


@dataclass
class RangeWindow:
    """Per-anchor ring buffer of accepted (distance, timestamp) pairs."""

    capacity: int = 5
    samples: deque = field(default_factory=deque)

    def __post_init__(self):
        self.samples = deque(self.samples, maxlen=self.capacity)

    def last(self):
        return self.samples[-1] if self.samples else None

    def append(self, distance, timestamp):
        self.samples.append((distance, timestamp))

    def distances(self):
        return [d for d, _ in self.samples]


@dataclass
class PositionFix:
    position: np.ndarray
    residual_rms: float
    anchor_count: int
    timestamp: float
    smoothed: np.ndarray
    # inverse Gram matrix of the range Jacobian at the solution; scales
    # range noise into position covariance (the square of DOP)
    gram_inv: np.ndarray = None


@dataclass
class FusedState:
    x: float
    y: float
    theta: float
    v: float
    covariance: np.ndarray
    last_innovation: np.ndarray
    gated: bool
    timestamp: float

    @property
    def position(self):
        return np.array([self.x, self.y])

    def mean(self):
        return np.array([self.x, self.y, self.theta, self.v])


def layer1_filter(window, new_sample, v_max, los_sigma=0.05):
    """Plausibility-gate a raw range and median it into the window.

    Rejects (returns None, window untouched) when the implied closing speed
    against the previous accepted sample exceeds v_max plus a 3-sigma noise
    allowance. On accept, returns the median of the window including the new
    sample; an even count takes the mean of the two middle values.
    """
    prev = window.last()
    if prev is not None:
        d_prev, t_prev = prev
        dt = max(new_sample.timestamp - t_prev, 1e-9)
        if abs(new_sample.distance - d_prev) / dt > v_max + 3.0 * los_sigma / dt:
            return None
    window.append(new_sample.distance, new_sample.timestamp)
    return float(np.median(window.distances()))


def _range_objective(p, anchors, distances):
    diff = np.linalg.norm(anchors - p, axis=1) - distances
    return float(diff @ diff)


def layer2_multilaterate(ranges, initial_guess):
    """Gauss-Newton least-squares position from >= 3 filtered ranges.

    ranges: list of (anchor position, distance). Minimizes
    sum_i (||p - a_i|| - d_i)^2; converged when the step norm drops below
    GN_STEP_TOL or after GN_MAX_ITERS. If the iterate leaves the anchor
    bounding box (padded by the largest range) or goes non-finite, restarts
    from the best cell of a coarse grid search. Collinear anchor sets are
    detected by the normal-equations condition number at the solution.
    """
    if len(ranges) < 3:
        raise InsufficientAnchorsError("need >= 3 anchors, got %d" % len(ranges))
    anchors = np.array([np.asarray(a, dtype=float) for a, _ in ranges])
    distances = np.array([float(d) for _, d in ranges])
    pad = distances.max() + 1.0
    lo = anchors.min(axis=0) - pad
    hi = anchors.max(axis=0) + pad

    def gauss_newton(start):
        p = np.asarray(start, dtype=float).copy()
        for _ in range(GN_MAX_ITERS):
            delta = p - anchors
            norms = np.linalg.norm(delta, axis=1)
            norms = np.maximum(norms, 1e-12)
            resid = norms - distances
            jac = delta / norms[:, None]
            jtj = jac.T @ jac
            jtr = jac.T @ resid
            try:
                step = np.linalg.solve(jtj, jtr)
            except np.linalg.LinAlgError:
                return None
            p = p - step
            if not np.all(np.isfinite(p)) or np.any(p < lo) or np.any(p > hi):
                return None
            if np.linalg.norm(step) < GN_STEP_TOL:
                break
        return p

    solution = gauss_newton(initial_guess)
    if solution is None:
        xs = np.arange(lo[0], hi[0] + RESTART_GRID_STEP, RESTART_GRID_STEP)
        ys = np.arange(lo[1], hi[1] + RESTART_GRID_STEP, RESTART_GRID_STEP)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        norms = np.linalg.norm(pts[:, None, :] - anchors[None, :, :], axis=2)
        obj = ((norms - distances[None, :]) ** 2).sum(axis=1)
        best = pts[int(np.argmin(obj))]
        solution = gauss_newton(best)
        if solution is None:
            solution = best
    delta = solution - anchors
    norms = np.maximum(np.linalg.norm(delta, axis=1), 1e-12)
    jac = delta / norms[:, None]
    jtj = jac.T @ jac
    if np.linalg.cond(jtj) > COND_LIMIT:
        raise CollinearAnchorsError("anchor geometry is degenerate")
    resid = norms - distances
    rms = float(np.sqrt(np.mean(resid ** 2)))
    ts = 0.0
    return PositionFix(solution, rms, len(ranges), ts, solution.copy(),
                       np.linalg.inv(jtj))


def layer2_smooth(previous, fix_position, alpha):
    """Exponential smoothing: alpha of the new fix, (1 - alpha) of the old."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    fix_position = np.asarray(fix_position, dtype=float)
    if previous is None:
        return fix_position.copy()
    return alpha * fix_position + (1.0 - alpha) * np.asarray(previous, dtype=float)


def _symmetrize(m):
    return 0.5 * (m + m.T)


def iaekf_predict(state, imu, dt, q=None):
    """Unicycle propagation: position advances with the current speed and
    heading, heading integrates the gyro, speed is replaced by the wheel
    reading. Covariance propagates through the motion Jacobian plus Q,
    where q is quoted per 0.1 s step and rescaled by dt/0.1."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if q is None:
        q = DEFAULT_Q
    q = q * (dt / 0.1)
    cos_t = math.cos(state.theta)
    sin_t = math.sin(state.theta)
    x = state.x + state.v * cos_t * dt
    y = state.y + state.v * sin_t * dt
    theta = geom.wrap_angle(state.theta + imu.yaw_rate * dt)
    v = imu.speed
    f = np.array([
        [1.0, 0.0, -state.v * sin_t * dt, cos_t * dt],
        [0.0, 1.0, state.v * cos_t * dt, sin_t * dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],  # speed comes from the wheel reading
    ])
    cov = _symmetrize(f @ state.covariance @ f.T + q)
    return FusedState(x, y, theta, v, cov, state.last_innovation.copy(),
                      False, imu.timestamp)


def iaekf_update(prior, fix, gate, r0=None):
    """Position update from a smoothed fix with innovation-scaled covariance.

    r = fix.smoothed - prior position. Within the gate (||r|| <= tau) this is
    a standard EKF update with R0; beyond it R = R0 * (||r||/tau)^(2*kappa),
    a continuous inflation (factor 1 exactly at the threshold). Joseph-form
    covariance update keeps the result symmetric positive-definite.
    """
    if r0 is None:
        r0 = DEFAULT_R0
    h = np.array([[1.0, 0.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0]])
    z = np.asarray(fix.smoothed, dtype=float)
    r_vec = z - np.array([prior.x, prior.y])
    norm = float(np.linalg.norm(r_vec))
    gated = norm > gate.tau
    if gated:
        factor = (norm / gate.tau) ** (2.0 * gate.inflation_exponent)
    else:
        factor = 1.0
    r_cov = r0 * factor
    p = prior.covariance
    s = h @ p @ h.T + r_cov
    k = p @ h.T @ np.linalg.inv(s)
    mean = prior.mean() + k @ r_vec
    ikh = np.eye(4) - k @ h
    cov = _symmetrize(ikh @ p @ ikh.T + k @ r_cov @ k.T)
    return FusedState(mean[0], mean[1], geom.wrap_angle(mean[2]), mean[3],
                      cov, r_vec, gated, fix.timestamp)


def reliability(history):
    """1 minus the gated fraction over the recent update history."""
    states = list(history)
    if not states:
        raise ValueError("reliability needs a nonempty history")
    gated = sum(1 for s in states if s.gated)
    return 1.0 - gated / len(states)


class FusionPipeline:
    """Feed RangingSample/ImuSample in timestamp order, read FusedState.

    Ranging samples sharing a timestamp form one measurement tick; the tick
    resolves (multilaterate + smooth + filter update) when a later-stamped
    sample arrives or flush() is called. Feeding an older timestamp than the
    latest accepted one raises ClockSkewError.
    """

    def __init__(self, scenario, initial_pose, gate=None, q=None, r0=None,
                 p0=None, alpha=0.6, window_size=5, v_max=2.0):
        self.scenario = scenario
        self.gate = gate or GateConfig()
        self.q = DEFAULT_Q if q is None else q
        self.r0 = r0
        self.alpha = alpha
        self.v_max = v_max
        self.window_size = window_size
        self._anchor_pos = {a.id: a.position for a in scenario.anchors}
        self._windows = {a.id: RangeWindow(window_size) for a in scenario.anchors}
        self._los_sigma = scenario.noise.los_sigma
        cov = DEFAULT_P0.copy() if p0 is None else np.asarray(p0, dtype=float).copy()
        self.state = FusedState(initial_pose.x, initial_pose.y,
                                initial_pose.theta, 0.0, cov,
                                np.zeros(2), False, 0.0)
        self._last_t = None
        self._smoothed = None
        self._tick = []  # buffered (anchor position, filtered distance)
        self._tick_t = None
        self.gate_history = deque(maxlen=self.gate.reliability_window)
        self.fix_count = 0

    def _check_time(self, t):
        if self._last_t is not None and t < self._last_t - 1e-9:
            raise ClockSkewError("sample at t=%.6f behind pipeline time %.6f"
                                 % (t, self._last_t))
        self._last_t = t

    def feed(self, sample):
        if isinstance(sample, ImuSample):
            self._check_time(sample.timestamp)
            self._resolve_tick()
            dt = sample.timestamp - self.state.timestamp
            if dt > 0:
                self.state = iaekf_predict(self.state, sample, dt, self.q)
        elif isinstance(sample, RangingSample):
            self._check_time(sample.timestamp)
            if self._tick_t is not None and sample.timestamp > self._tick_t + 1e-12:
                self._resolve_tick()
            window = self._windows[sample.anchor_id]
            filtered = layer1_filter(window, sample, self.v_max, self._los_sigma)
            if filtered is not None:
                self._tick.append((self._anchor_pos[sample.anchor_id], filtered))
                self._tick_t = sample.timestamp
        else:
            raise TypeError("unsupported sample type: %r" % type(sample).__name__)
        return self.state

    def flush(self):
        """Resolve any buffered measurement tick and return the state."""
        self._resolve_tick()
        return self.state

    def _resolve_tick(self):
        if not self._tick:
            return
        ranges = self._tick
        tick_t = self._tick_t
        self._tick = []
        self._tick_t = None
        if len(ranges) < 3:
            return
        try:
            fix = layer2_multilaterate(ranges, self.state.position)
        except CollinearAnchorsError:
            return
        fix.timestamp = tick_t
        self._smoothed = layer2_smooth(self._smoothed, fix.position, self.alpha)
        fix.smoothed = self._smoothed.copy()
        self.state = iaekf_update(self.state, fix, self.gate, self.r0)
        self.gate_history.append(self.state)
        self.fix_count += 1

    def reliability_score(self):
        if not self.gate_history:
            return 1.0
        return reliability(self.gate_history)

    def estimate(self):
        return self.state


class RawUwbEstimator:
    """Layer-1/2-only baseline: pose = smoothed multilateration fixes fed
    straight to the controller, no state-space filtering or innovation
    gating. Heading is course over ground from fix differences, resolved
    once the track advances past a displacement baseline and flipped by pi
    while the wheels report reverse; it lags and wobbles by construction.
    Speed comes from the wheel reading. Same feed/flush interface as the
    full pipeline."""

    # COG heading differences span at least this much smoothed-track motion
    HEADING_BASELINE = 0.3
    TRACK_KEEP = 40

    def __init__(self, scenario, initial_pose, alpha=0.6, window_size=5,
                 v_max=2.0):
        self.scenario = scenario
        self.alpha = alpha
        self.v_max = v_max
        self._anchor_pos = {a.id: a.position for a in scenario.anchors}
        self._windows = {a.id: RangeWindow(window_size) for a in scenario.anchors}
        self._los_sigma = scenario.noise.los_sigma
        self.state = FusedState(initial_pose.x, initial_pose.y,
                                initial_pose.theta, 0.0,
                                np.diag([0.25, 0.25, 0.04, 0.25]),
                                np.zeros(2), False, 0.0)
        self._last_t = None
        self._track = deque([np.array([initial_pose.x, initial_pose.y])],
                            maxlen=self.TRACK_KEEP)
        self._smoothed = None
        self._tick = []
        self._tick_t = None
        self.fix_count = 0

    def _check_time(self, t):
        if self._last_t is not None and t < self._last_t - 1e-9:
            raise ClockSkewError("sample at t=%.6f behind pipeline time %.6f"
                                 % (t, self._last_t))
        self._last_t = t

    def feed(self, sample):
        if isinstance(sample, ImuSample):
            self._check_time(sample.timestamp)
            self._resolve_tick()
            self.state = FusedState(self.state.x, self.state.y,
                                    self.state.theta, sample.speed,
                                    self.state.covariance, np.zeros(2),
                                    False, sample.timestamp)
        elif isinstance(sample, RangingSample):
            self._check_time(sample.timestamp)
            if self._tick_t is not None and sample.timestamp > self._tick_t + 1e-12:
                self._resolve_tick()
            window = self._windows[sample.anchor_id]
            filtered = layer1_filter(window, sample, self.v_max, self._los_sigma)
            if filtered is not None:
                self._tick.append((self._anchor_pos[sample.anchor_id], filtered))
                self._tick_t = sample.timestamp
        else:
            raise TypeError("unsupported sample type: %r" % type(sample).__name__)
        return self.state

    def flush(self):
        self._resolve_tick()
        return self.state

    def _resolve_tick(self):
        if not self._tick:
            return
        ranges = self._tick
        tick_t = self._tick_t
        self._tick = []
        self._tick_t = None
        if len(ranges) < 3:
            return
        try:
            fix = layer2_multilaterate(ranges, self.state.position)
        except CollinearAnchorsError:
            return
        self._smoothed = layer2_smooth(self._smoothed, fix.position, self.alpha)
        pos = self._smoothed
        theta = self.state.theta
        for past in reversed(self._track):
            step = pos - past
            if np.hypot(step[0], step[1]) >= self.HEADING_BASELINE:
                theta = math.atan2(step[1], step[0])
                if self.state.v < 0.0:
                    # course over ground points opposite the body in reverse
                    theta = geom.wrap_angle(theta + math.pi)
                break
        self._track.append(pos.copy())
        self.state = FusedState(float(pos[0]), float(pos[1]), theta,
                                self.state.v, self.state.covariance,
                                np.zeros(2), False, tick_t)
        self.fix_count += 1

    def reliability_score(self):
        return 1.0

    def estimate(self):
        return self.state
