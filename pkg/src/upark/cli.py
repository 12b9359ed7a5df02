"""Command-line front end.

Subcommands: simulate (one tracking run), plan (route + maneuver to CSV),
compare (four-method benchmark over seeds), metrics (recompute error metrics
from logged CSVs), serve (coordination server), vehicle (one client session
against a running server). Exit code 0 only when every requested run
succeeded.
"""

import argparse
import csv
import glob
import json
import logging
import os
import sys

import numpy as np

from . import control, coordination, harness, metrics, world
from .errors import UparkError

log = logging.getLogger(__name__)


def _load_scenario(arg):
    if os.path.exists(arg):
        return world.load_scenario_file(arg)
    return world.bundled_scenario(arg)


def _add_scenario_arg(parser):
    parser.add_argument("--scenario", required=True,
                        help="scenario file path or bundled name "
                             "(lot, open, uwall, triple)")


def _cmd_simulate(args):
    scenario = _load_scenario(args.scenario)
    arts = harness.run_experiment_full(scenario, args.method, args.seed,
                                       out_dir=args.out)
    print(arts.report.to_json())
    return 0 if arts.report.success else 1


def _cmd_plan(args):
    scenario = _load_scenario(args.scenario)
    guidance, plan = harness.plan_for(scenario, args.guidance,
                                      compare_plain=True)
    summary = {
        "slot": plan.slot_id,
        "backend": guidance.backend,
        "waypoints": [[round(float(x), 3) for x in wp]
                      for wp in guidance.waypoints],
        "grid_cost_guided": round(plan.cost_guided, 3),
        "expanded_guided": plan.expanded_guided,
        "grid_cost_unguided": round(plan.cost_plain, 3),
        "expanded_unguided": plan.expanded_plain,
        "replanned": plan.replanned,
        "duration_s": round(plan.trajectory.duration, 2),
    }
    text = json.dumps(summary, indent=2)
    if args.out:
        harness.write_trajectory_csv(args.out, plan.trajectory)
        print(text)
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(("t", "x", "y", "theta", "v", "gear", "phase"))
        for row in plan.trajectory.rows():
            writer.writerow(["%.9g" % v if isinstance(v, float) else v
                             for v in row])
        print(text, file=sys.stderr)
    return 0


def _cmd_compare(args):
    scenario = _load_scenario(args.scenario)
    result = harness.compare(scenario, list(range(args.seeds)),
                             guidance_backend=args.guidance,
                             out_csv=args.out, out_dir=args.out_dir)
    print(result.format_table())
    ok = all(r.success for reports in result.reports.values()
             for r in reports)
    return 0 if ok else 1


def _read_reference_csv(path):
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["t", "x", "y", "theta"]:
        raise UparkError("%s is not a reference trajectory CSV" % path)
    body = rows[1:]
    return np.array([[float(r[1]), float(r[2])] for r in body])


def _cmd_metrics(args):
    pattern = os.path.join(args.dir, "log_*.csv")
    logs = sorted(glob.glob(pattern))
    if not logs:
        print("no log CSVs under %s" % args.dir, file=sys.stderr)
        return 1
    status = 0
    for log_path in logs:
        tag = os.path.basename(log_path)[len("log_"):-len(".csv")]
        ref_path = os.path.join(args.dir, "reference_%s.csv" % tag)
        if not os.path.exists(ref_path):
            print("%s: no matching reference CSV" % tag, file=sys.stderr)
            status = 1
            continue
        logbook = control.TrajectoryLog.read_csv(log_path)
        reference = _read_reference_csv(ref_path)
        e_max, e_mean = metrics.euclidean_errors(logbook.true_xy(), reference)
        dtw = metrics.dtw_normalized(logbook.true_xy(), reference)
        line = ("%s  euclidean_max=%.4f m  euclidean_mean=%.4f m  "
                "dtw_normalized=%.4f m" % (tag, e_max, e_mean, dtw))
        report_path = os.path.join(args.dir, "report_%s.json" % tag)
        if os.path.exists(report_path):
            with open(report_path) as fh:
                stored = metrics.MetricsReport.from_json(fh.read())
            drift = max(abs(e_max - stored.euclidean_max),
                        abs(e_mean - stored.euclidean_mean),
                        abs(dtw - stored.dtw_normalized_mean))
            if drift < 1e-4:
                line += "  (matches stored report)"
            else:
                line += "  (DISAGREES with stored report by %.2e)" % drift
                status = 1
        print(line)
    return status


def _cmd_serve(args):
    scenario = _load_scenario(args.scenario)
    server = coordination.TcpServer(scenario, host=args.host, port=args.port,
                                    guidance_backend=args.guidance)
    print("serving %s on %s:%d (guidance=%s); ctrl-C to stop"
          % (scenario.name, server.host, server.port, args.guidance))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _cmd_vehicle(args):
    host, _, port = args.connect.partition(":")
    scenario = _load_scenario(args.scenario)
    transport = coordination.TcpTransport(host, int(port or
                                                    coordination.DEFAULT_PORT))
    outcome = coordination.vehicle_agent(scenario, args.id, transport,
                                         method=args.method, seed=args.seed)
    print(json.dumps({
        "vehicle": outcome.vehicle_id,
        "session": outcome.session_id,
        "slot": outcome.slot_id,
        "success": outcome.success,
        "reason": outcome.reason,
    }, indent=2))
    return 0 if outcome.success else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="upark",
        description="UWB-guided valet parking simulator and benchmark")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one method on one seed")
    _add_scenario_arg(p)
    p.add_argument("--method", default="integrated", choices=harness.METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="directory for report/log/reference artifacts")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("plan", help="plan a parking run and emit the "
                                    "reference trajectory CSV")
    _add_scenario_arg(p)
    p.add_argument("--guidance", default="heuristic",
                   choices=("heuristic", "llm"))
    p.add_argument("--out", default=None, help="trajectory CSV path "
                                               "(stdout when omitted)")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("compare", help="four-method benchmark over seeds")
    _add_scenario_arg(p)
    p.add_argument("--seeds", type=int, default=20,
                   help="number of seeds (0..N-1)")
    p.add_argument("--out", default=None, help="comparison table CSV path")
    p.add_argument("--out-dir", default=None,
                   help="directory for per-run artifacts")
    p.add_argument("--guidance", default="heuristic",
                   choices=("heuristic", "llm"))
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("metrics", help="recompute error metrics from "
                                       "logged artifact CSVs")
    p.add_argument("--dir", required=True,
                   help="artifacts directory written by simulate/compare")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("serve", help="run the coordination server")
    _add_scenario_arg(p)
    p.add_argument("--guidance", default="heuristic",
                   choices=("heuristic", "llm"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=coordination.DEFAULT_PORT)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("vehicle", help="run one vehicle session against a "
                                       "running server")
    p.add_argument("--connect", required=True, help="host:port")
    _add_scenario_arg(p)
    p.add_argument("--id", required=True, help="vehicle id, e.g. V1")
    p.add_argument("--method", default="integrated", choices=harness.METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_vehicle)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UparkError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
