"""Closed-loop experiment harness.

Wires the four localization/control variants into one deterministic
simulation: ground truth integrates the held command at 50 Hz, IMU samples
arrive every tick and ranging rounds every fifth tick (10 Hz), all drawn
from a single precomputed noise stream per seed so every variant consumes a
prefix of the same randomness (equal digests prove it). The comparison
sweep aggregates the standard error metrics per method over seeds.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import control, geom, guidance, metrics, planning, sensors, world
from .errors import UparkError
from .localization import FusionPipeline, GateConfig, RawUwbEstimator

log = logging.getLogger("upark.harness")

DT_SIM = 0.02
RANGING_EVERY = 5
METHODS = ("raw-uwb", "uwb-ekf", "uwb-iaekf", "integrated")

# Reference values from the original physical-testbed evaluation of this
# stack (same metrics, real UWB hardware). Shown as context rows in the
# comparison output; simulated numbers are never checked against them.
REFERENCE_RESULTS = {
    "raw-uwb": ("UWB", 2.354, 0.240, 0.284),
    "uwb-ekf": ("UWB+EKF", 1.692, 0.190, 0.212),
    "uwb-iaekf": ("UWB+IAEKF", 0.653, 0.138, 0.169),
    "integrated": ("Integrated", 0.517, 0.118, 0.133),
}


@dataclass
class MethodConfig:
    name: str
    use_filter: bool
    gate_tau: Optional[float]   # None = default gate, inf = gating disabled
    adaptive_mpc: bool
    guidance_backend: str = "heuristic"
    noise: Optional[world.NoiseProfile] = None


def method_config(name, guidance_backend="heuristic", noise=None):
    table = {
        "raw-uwb": dict(use_filter=False, gate_tau=None, adaptive_mpc=False),
        "uwb-ekf": dict(use_filter=True, gate_tau=math.inf, adaptive_mpc=False),
        "uwb-iaekf": dict(use_filter=True, gate_tau=None, adaptive_mpc=False),
        "integrated": dict(use_filter=True, gate_tau=None, adaptive_mpc=True),
    }
    if name not in table:
        raise ValueError("unknown method %r (choose from %s)"
                         % (name, ", ".join(METHODS)))
    return MethodConfig(name=name, guidance_backend=guidance_backend,
                        noise=noise, **table[name])


def build_estimator(cfg, scenario, pose):
    if not cfg.use_filter:
        return RawUwbEstimator(scenario, pose)
    gate = GateConfig() if cfg.gate_tau is None else GateConfig(tau=cfg.gate_tau)
    return FusionPipeline(scenario, pose, gate=gate)


def draw_schedule(n_ticks, n_anchors, ranging_every=RANGING_EVERY):
    """Exact draw-kind order one simulation consumes: two normals per IMU
    tick, then a (uniform, normal, normal, normal) block per anchor on
    ranging ticks."""
    per_anchor = (sensors.UNIFORM_DRAW, sensors.NORMAL_DRAW,
                  sensors.NORMAL_DRAW, sensors.NORMAL_DRAW)
    kinds = []
    for tick in range(1, n_ticks + 1):
        kinds.extend((sensors.NORMAL_DRAW, sensors.NORMAL_DRAW))
        if tick % ranging_every == 0:
            kinds.extend(per_anchor * n_anchors)
    return np.array(kinds, dtype=np.uint8)


class SimPlant:
    """Ground truth + sensors + estimator behind the tracking plant interface."""

    def __init__(self, scenario, estimator, stream, start_pose,
                 dt_sim=DT_SIM, ranging_every=RANGING_EVERY):
        self.scenario = scenario
        self.estimator = estimator
        self.stream = stream
        self.dt_sim = dt_sim
        self.ranging_every = ranging_every
        self.truth = control.VehicleState(start_pose, 0.0, 0.0, 0.0)
        self.tick = 0

    def estimate(self):
        self.estimator.flush()
        return self.estimator.estimate()

    def reliability(self):
        return self.estimator.reliability_score()

    def true_state(self):
        return self.truth

    def advance(self, cmd, dt):
        n = int(round(dt / self.dt_sim))
        for _ in range(n):
            self.truth = control.vehicle_step(self.truth, cmd, self.dt_sim)
            self.tick += 1
            t = self.tick * self.dt_sim
            self.estimator.feed(
                sensors.sample_imu(self.scenario, self.truth, t, self.stream))
            if self.tick % self.ranging_every == 0:
                pos = (self.truth.pose.x, self.truth.pose.y)
                for sample in sensors.sample_ranging(self.scenario, pos, t,
                                                     self.stream):
                    self.estimator.feed(sample)


@dataclass
class RunArtifacts:
    report: metrics.MetricsReport
    log: Optional[control.TrajectoryLog]
    trajectory: Optional[planning.ReferenceTrajectory]
    plan: Optional[planning.PlanResult]
    guidance_result: Optional[guidance.GuidanceResult]
    track_result: Optional[control.TrackResult]


def plan_for(scenario, guidance_backend="heuristic", llm_endpoint=None,
             compare_plain=False):
    """Guidance plus full plan for the scenario's entry pose (noise-free,
    shared across methods and seeds)."""
    grid = world.rasterize(
        scenario, world.default_inflation(planning.DEFAULT_VEHICLE_WIDTH))
    nodes = world.extract_candidate_nodes(grid, scenario)
    ctx = guidance.build_context(scenario, nodes, scenario.entry_pose)
    if guidance_backend == "llm":
        chosen = guidance.llm_guidance(ctx, llm_endpoint)
    elif guidance_backend == "heuristic":
        chosen = guidance.heuristic_guidance(ctx)
    else:
        raise ValueError("unknown guidance backend %r" % guidance_backend)
    plan = planning.plan_parking(scenario, chosen.slot_id,
                                 waypoints=chosen.waypoints, grid=grid,
                                 compare_plain=compare_plain)
    return chosen, plan


def terminal_errors(scenario, slot_id, pose):
    slot = scenario.slot(slot_id)
    axis = np.array([math.cos(slot.heading), math.sin(slot.heading)])
    offset = np.array([pose.x, pose.y]) - slot.center
    position = float(np.linalg.norm(offset))
    lateral = abs(float(axis[0] * offset[1] - axis[1] * offset[0]))
    heading = geom.axis_heading_error(pose.theta, slot.heading)
    return position, lateral, heading


def evaluate_log(scenario, slot_id, trajectory, logbook, method_name, seed,
                 success, final_pose, digest=""):
    ref_points = np.column_stack([trajectory.x, trajectory.y])
    executed = logbook.true_xy()
    e_max, e_mean = metrics.euclidean_errors(executed, trajectory)
    dtw = metrics.dtw_normalized(executed, ref_points)
    term_pos, term_lat, term_head = terminal_errors(scenario, slot_id, final_pose)
    return metrics.MetricsReport(
        method=method_name, scenario_id=scenario.name, seed=int(seed),
        success=bool(success), euclidean_max=e_max, euclidean_mean=e_mean,
        dtw_normalized_mean=dtw, terminal_position_error=term_pos,
        terminal_lateral_error=term_lat, terminal_heading_error=term_head,
        stream_digest=digest)


def make_stream(scenario, trajectory, seed, mpc_cfg=None):
    """Precomputed noise stream long enough for the tracking deadline."""
    cfg = mpc_cfg or control.MpcConfig()
    deadline = 3.0 * max(trajectory.duration, cfg.dt) + 5.0
    n_ticks = int(math.ceil((deadline + 1.0) / DT_SIM)) + RANGING_EVERY
    kinds = draw_schedule(n_ticks, len(scenario.anchors))
    return sensors.NoiseStream.precomputed(seed, kinds)


def run_experiment_full(scenario, method, seed, out_dir=None, plan=None,
                        guidance_result=None, mpc_cfg=None):
    cfg = method_config(method) if isinstance(method, str) else method
    run_scenario = scenario
    if cfg.noise is not None:
        run_scenario = replace(scenario, noise=cfg.noise)
    if plan is None:
        try:
            guidance_result, plan = plan_for(run_scenario, cfg.guidance_backend)
        except UparkError as exc:
            log.warning("planning failed: %s", exc)
            report = metrics.MetricsReport(
                method=cfg.name, scenario_id=scenario.name, seed=int(seed),
                success=False, euclidean_max=math.nan, euclidean_mean=math.nan,
                dtw_normalized_mean=math.nan, terminal_position_error=math.nan,
                terminal_lateral_error=math.nan, terminal_heading_error=math.nan)
            return RunArtifacts(report, None, None, None, None, None)
    trajectory = plan.trajectory
    mpc = mpc_cfg or control.MpcConfig()
    stream = make_stream(run_scenario, trajectory, seed, mpc)
    estimator = build_estimator(cfg, run_scenario, run_scenario.entry_pose)
    plant = SimPlant(run_scenario, estimator, stream, run_scenario.entry_pose)
    result = control.track(trajectory, plant, mpc, adaptive=cfg.adaptive_mpc)
    report = evaluate_log(run_scenario, plan.slot_id, trajectory, result.log,
                          cfg.name, seed, result.success,
                          plant.true_state().pose, stream.digest())
    if out_dir is not None:
        write_artifacts(out_dir, report, result.log, trajectory)
    return RunArtifacts(report, result.log, trajectory, plan,
                        guidance_result, result)


def run_experiment(scenario, method, seed, out_dir=None):
    """MetricsReport for one (scenario, method, seed) run; artifacts
    (trajectory log, reference CSV, report JSON) land in out_dir if given."""
    return run_experiment_full(scenario, method, seed, out_dir=out_dir).report


def write_artifacts(out_dir, report, logbook, trajectory):
    os.makedirs(out_dir, exist_ok=True)
    tag = "%s_seed%d" % (report.method, report.seed)
    with open(os.path.join(out_dir, "report_%s.json" % tag), "w") as fh:
        fh.write(report.to_json() + "\n")
    if logbook is not None:
        logbook.write_csv(os.path.join(out_dir, "log_%s.csv" % tag))
    if trajectory is not None:
        write_trajectory_csv(
            os.path.join(out_dir, "reference_%s.csv" % tag), trajectory)


def write_trajectory_csv(path, trajectory):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "x", "y", "theta", "v", "gear", "phase"))
        for row in trajectory.rows():
            writer.writerow(["%.9g" % v if isinstance(v, float) else v
                             for v in row])


@dataclass
class ComparisonResult:
    scenario_id: str
    seeds: list
    reports: dict                  # method -> [MetricsReport per seed]
    aggregates: dict               # method -> (max, mean, dtw) means
    ordering_fraction: float       # seeds with strict mean-error ordering
    aggregate_ordering: dict       # metric -> bool, full ordering on means
    digests: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("method", "euclidean_max_m", "euclidean_mean_m",
                             "dtw_normalized_mean_m", "source"))
            for m in METHODS:
                agg = self.aggregates[m]
                writer.writerow((m, "%.6f" % agg[0], "%.6f" % agg[1],
                                 "%.6f" % agg[2], "simulation"))
            for m in METHODS:
                label, e_max, e_mean, dtw = REFERENCE_RESULTS[m]
                writer.writerow((label, "%.3f" % e_max, "%.3f" % e_mean,
                                 "%.3f" % dtw, "reference"))
            writer.writerow(("ordering_fraction", "%.3f" % self.ordering_fraction,
                             "", "", "simulation"))

    def format_table(self):
        lines = ["method      euclidean_max  euclidean_mean  dtw_norm_mean"]
        for m in METHODS:
            agg = self.aggregates[m]
            lines.append("%-11s %13.3f %15.3f %14.3f" % (m, *agg))
        lines.append("")
        lines.append("reference hardware evaluation (context only, not asserted):")
        for m in METHODS:
            label, e_max, e_mean, dtw = REFERENCE_RESULTS[m]
            lines.append("%-11s %13.3f %15.3f %14.3f" % (label, e_max, e_mean, dtw))
        lines.append("")
        lines.append("strict mean-error ordering integrated < uwb-iaekf < "
                     "uwb-ekf < raw-uwb: %.0f%% of %d seeds"
                     % (100.0 * self.ordering_fraction, len(self.seeds)))
        return "\n".join(lines)


def compare(scenario, seeds, guidance_backend="heuristic", out_csv=None,
            out_dir=None):
    """All four methods per seed on shared plans and shared noise streams."""
    if not seeds:
        raise ValueError("need at least one seed")
    chosen, plan = plan_for(scenario, guidance_backend)
    reports = {m: [] for m in METHODS}
    digests = []
    ordered = 0
    for seed in seeds:
        seed_digest = None
        for m in METHODS:
            art = run_experiment_full(scenario, m, seed, out_dir=out_dir,
                                      plan=plan, guidance_result=chosen)
            reports[m].append(art.report)
            if seed_digest is None:
                seed_digest = art.report.stream_digest
            elif art.report.stream_digest != seed_digest:
                raise AssertionError(
                    "methods consumed different noise streams on seed %s" % seed)
        digests.append(seed_digest)
        means = [reports[m][-1].euclidean_mean for m in
                 ("integrated", "uwb-iaekf", "uwb-ekf", "raw-uwb")]
        if all(means[i] < means[i + 1] for i in range(3)):
            ordered += 1
    aggregates = {}
    for m in METHODS:
        aggregates[m] = (
            float(np.mean([r.euclidean_max for r in reports[m]])),
            float(np.mean([r.euclidean_mean for r in reports[m]])),
            float(np.mean([r.dtw_normalized_mean for r in reports[m]])))
    rank = ("integrated", "uwb-iaekf", "uwb-ekf", "raw-uwb")
    aggregate_ordering = {}
    for idx, metric in enumerate(("max", "mean", "dtw")):
        vals = [aggregates[m][idx] for m in rank]
        aggregate_ordering[metric] = all(vals[i] < vals[i + 1] for i in range(3))
    result = ComparisonResult(
        scenario_id=scenario.name, seeds=list(seeds), reports=reports,
        aggregates=aggregates, ordering_fraction=ordered / len(seeds),
        aggregate_ordering=aggregate_ordering, digests=digests)
    if out_csv is not None:
        result.to_csv(out_csv)
    return result
