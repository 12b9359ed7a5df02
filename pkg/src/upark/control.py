"""Differential-drive kinematics and the reliability-adaptive MPC tracker.

The solver is projected gradient descent on the shooting cost with an
analytic adjoint gradient, warm-started from the previous solution shifted
one step. Iterates stay feasible (box then sequential rate clipping), and
descent starts from the cheaper of the projected zero and warm-start
sequences, so the returned cost never exceeds either baseline. When
localization reliability drops, position error is down-weighted and command
increments are penalized harder.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import accel, geom
from .world import Pose2D

log = logging.getLogger("upark.control")

SOLVE_MAX_ITERS = 50
SOLVE_COST_TOL = 1e-6
BACKTRACK_MAX = 15


@dataclass
class ControlCommand:
    v: float = 0.0
    omega: float = 0.0

    def as_array(self):
        return np.array([self.v, self.omega])


@dataclass
class VehicleState:
    pose: Pose2D
    v: float = 0.0
    omega: float = 0.0
    timestamp: float = 0.0


@dataclass
class MpcConfig:
    horizon: int = 15
    dt: float = 0.1
    w_p: float = 10.0
    w_theta: float = 2.0
    w_v: float = 1.0
    w_omega: float = 1.0
    w_term: float = 20.0
    v_max: float = 1.5
    omega_max: float = 1.5
    dv_max: float = 0.5
    domega_max: float = 0.8
    w_p_min_scale: float = 0.2
    delta_penalty_max_scale: float = 3.0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if min(self.w_p, self.w_theta, self.w_v, self.w_omega, self.w_term) < 0:
            raise ValueError("weights must be nonnegative")
        if not 0.0 <= self.w_p_min_scale <= 1.0:
            raise ValueError("w_p_min_scale must be in [0, 1]")
        if self.delta_penalty_max_scale < 1.0:
            raise ValueError("delta_penalty_max_scale must be >= 1")


@dataclass
class Weights:
    w_p: float
    w_theta: float
    w_v: float
    w_omega: float
    w_term: float


def vehicle_step(state, cmd, dt, v_limit=None, omega_limit=None):
    """Exact unicycle integration of a held command.

    Straight-line branch below |omega| = 1e-9, circular arc otherwise.
    Optional limits reject out-of-range commands.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if v_limit is not None and abs(cmd.v) > v_limit + 1e-12:
        raise ValueError("command v %.3f exceeds limit %.3f" % (cmd.v, v_limit))
    if omega_limit is not None and abs(cmd.omega) > omega_limit + 1e-12:
        raise ValueError("command omega %.3f exceeds limit %.3f"
                         % (cmd.omega, omega_limit))
    x, y, th = state.pose.x, state.pose.y, state.pose.theta
    v, w = cmd.v, cmd.omega
    th2 = th + w * dt
    if abs(w) < 1e-9:
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
    else:
        r = v / w
        x += r * (math.sin(th2) - math.sin(th))
        y += r * (math.cos(th) - math.cos(th2))
    return VehicleState(Pose2D(x, y, th2), v, w, state.timestamp + dt)


def adapt_weights(cfg, score):
    """Effective weights at a reliability score in [0, 1]: linear blend from
    the base weights (score 1) to down-weighted position / up-weighted
    increment penalties (score 0)."""
    if not 0.0 <= score <= 1.0:
        raise ValueError("reliability score must be in [0, 1]")
    w_p = cfg.w_p * (cfg.w_p_min_scale + (1.0 - cfg.w_p_min_scale) * score)
    boost = 1.0 + (cfg.delta_penalty_max_scale - 1.0) * (1.0 - score)
    return Weights(w_p, cfg.w_theta, cfg.w_v * boost, cfg.w_omega * boost,
                   cfg.w_term)


def base_weights(cfg):
    return Weights(cfg.w_p, cfg.w_theta, cfg.w_v, cfg.w_omega, cfg.w_term)


def project_sequence(u, prev_cmd, cfg):
    """Clip a command sequence into the box and rate constraints (sequential
    from prev_cmd); the result is always feasible."""
    out = np.array(u, dtype=float, copy=True)
    out[:, 0] = np.clip(out[:, 0], -cfg.v_max, cfg.v_max)
    out[:, 1] = np.clip(out[:, 1], -cfg.omega_max, cfg.omega_max)
    pv, pw = prev_cmd
    for k in range(out.shape[0]):
        lo = max(-cfg.v_max, pv - cfg.dv_max)
        hi = min(cfg.v_max, pv + cfg.dv_max)
        out[k, 0] = min(max(out[k, 0], lo), hi)
        lo = max(-cfg.omega_max, pw - cfg.domega_max)
        hi = min(cfg.omega_max, pw + cfg.domega_max)
        out[k, 1] = min(max(out[k, 1], lo), hi)
        pv, pw = out[k, 0], out[k, 1]
    return out


def sequence_cost(mean, refs, u, prev_cmd, weights, cfg):
    return accel.mpc_rollout_cost(
        float(mean[0]), float(mean[1]), float(mean[2]),
        np.ascontiguousarray(u, dtype=float),
        np.ascontiguousarray(refs, dtype=float),
        float(prev_cmd[0]), float(prev_cmd[1]),
        weights.w_p, weights.w_theta, weights.w_v, weights.w_omega,
        weights.w_term, cfg.dt)


def mpc_solve_sequence(mean, refs, prev_cmd, cfg, weights, warm=None):
    """Feasible command sequence minimizing the tracking cost.

    mean: current state [x, y, theta, ...]; refs: (N, 3) reference poses for
    the N produced states; prev_cmd: (v, omega) executed last. Returns
    (sequence (N, 2), cost). Descent starts from the cheaper of the
    projected zero and projected warm-start sequences and only ever
    improves, so cost <= both baselines.
    """
    n = cfg.horizon
    refs = np.ascontiguousarray(refs, dtype=float)
    if refs.shape != (n, 3):
        raise ValueError("refs must be (horizon, 3)")
    x0, y0, th0 = float(mean[0]), float(mean[1]), float(mean[2])
    pv, pw = float(prev_cmd[0]), float(prev_cmd[1])

    def cost_of(u):
        return accel.mpc_rollout_cost(x0, y0, th0, u, refs, pv, pw,
                                      weights.w_p, weights.w_theta, weights.w_v,
                                      weights.w_omega, weights.w_term, cfg.dt)

    u = project_sequence(np.zeros((n, 2)), prev_cmd, cfg)
    c = cost_of(u)
    if warm is not None:
        uw = project_sequence(warm, prev_cmd, cfg)
        cw = cost_of(uw)
        if cw < c:
            u, c = uw, cw

    u = np.ascontiguousarray(u)
    grad = np.empty((n, 2))
    trial = np.empty((n, 2))
    c = accel.mpc_descent(x0, y0, th0, u, refs, pv, pw,
                          weights.w_p, weights.w_theta, weights.w_v,
                          weights.w_omega, weights.w_term, cfg.dt,
                          cfg.v_max, cfg.omega_max, cfg.dv_max,
                          cfg.domega_max, c, SOLVE_MAX_ITERS, BACKTRACK_MAX,
                          SOLVE_COST_TOL, grad, trial)
    return u, c


class MpcController:
    """Stateful wrapper: warm starts, rate-limit memory, adaptation."""

    def __init__(self, cfg=None, adaptive=False):
        self.cfg = cfg or MpcConfig()
        self.adaptive = adaptive
        self.prev_cmd = (0.0, 0.0)
        self._warm = None
        self.solve_count = 0
        self.nonmonotone_count = 0

    def step(self, estimate_mean, refs, reliability=1.0):
        weights = (adapt_weights(self.cfg, reliability) if self.adaptive
                   else base_weights(self.cfg))
        warm = None
        if self._warm is not None:
            warm = np.vstack([self._warm[1:], self._warm[-1:]])
        u, cost = mpc_solve_sequence(estimate_mean, refs, self.prev_cmd,
                                     self.cfg, weights, warm)
        zero_cost = sequence_cost(estimate_mean, refs,
                                  project_sequence(np.zeros_like(u),
                                                   self.prev_cmd, self.cfg),
                                  self.prev_cmd, weights, self.cfg)
        if cost > zero_cost + 1e-9:
            self.nonmonotone_count += 1
            log.error("mpc solve cost %.6f above zero baseline %.6f", cost, zero_cost)
        self._warm = u
        self.prev_cmd = (float(u[0, 0]), float(u[0, 1]))
        self.solve_count += 1
        return ControlCommand(float(u[0, 0]), float(u[0, 1]))


LOG_COLUMNS = ("t", "true_x", "true_y", "true_theta", "est_x", "est_y",
               "est_theta", "ref_x", "ref_y", "ref_theta", "cmd_v",
               "cmd_omega", "gated")


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)

    def append(self, t, true_pose, est_pose, ref_pose, cmd, gated):
        self.rows.append((t, true_pose[0], true_pose[1], true_pose[2],
                          est_pose[0], est_pose[1], est_pose[2],
                          ref_pose[0], ref_pose[1], ref_pose[2],
                          cmd.v, cmd.omega, int(gated)))

    def true_xy(self):
        return np.array([(r[1], r[2]) for r in self.rows])

    def est_xy(self):
        return np.array([(r[4], r[5]) for r in self.rows])

    def column(self, name):
        return np.array([r[LOG_COLUMNS.index(name)] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_COLUMNS)
            for row in self.rows:
                writer.writerow(["%.9g" % v if isinstance(v, float) else v
                                 for v in row])

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != LOG_COLUMNS:
                raise ValueError("unexpected log header: %r" % header)
            for row in reader:
                values = [float(v) for v in row]
                values[-1] = int(values[-1])
                out.rows.append(tuple(values))
        return out


@dataclass
class TrackResult:
    success: bool
    reason: str
    log: TrajectoryLog
    elapsed: float


SETTLE_RADIUS = 0.15
SETTLE_TIME = 1.0


def track(trajectory, plant, cfg=None, adaptive=False, on_step=None):
    """Closed-loop tracking of a reference trajectory.

    The plant supplies estimates (and advances truth under each command);
    the loop runs at the MPC period, settles when the estimated position
    stays within SETTLE_RADIUS of the terminal point for SETTLE_TIME after
    the trajectory ends, and fails at three times the nominal duration plus
    a settle grace. on_step(t, estimate, reliability), if given, runs once
    per control step before the command is applied.
    """
    cfg = cfg or MpcConfig()
    controller = MpcController(cfg, adaptive=adaptive)
    logbook = TrajectoryLog()
    duration = trajectory.duration
    deadline = 3.0 * max(duration, cfg.dt) + 5.0
    terminal = trajectory.terminal_pose
    t = 0.0
    settled = 0.0
    while True:
        est = plant.estimate()
        rel = plant.reliability()
        if on_step is not None:
            on_step(t, est, rel)
        refs, _ = trajectory.window(t, cfg.horizon, cfg.dt)
        cmd = controller.step(est.mean(), refs, rel)
        ref_now = trajectory.lookup(t)[:3]
        true_state = plant.true_state()
        logbook.append(t, (true_state.pose.x, true_state.pose.y,
                           true_state.pose.theta),
                       (est.x, est.y, est.theta), ref_now, cmd, est.gated)
        plant.advance(cmd, cfg.dt)
        t += cfg.dt
        if t >= duration:
            est_after = plant.estimate()
            err = math.hypot(est_after.x - terminal[0], est_after.y - terminal[1])
            if err < SETTLE_RADIUS:
                settled += cfg.dt
                if settled >= SETTLE_TIME:
                    return TrackResult(True, "settled", logbook, t)
            else:
                settled = 0.0
        if t > deadline:
            return TrackResult(False, "timeout after %.1f s" % t, logbook, t)
