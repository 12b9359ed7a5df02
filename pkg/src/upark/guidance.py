"""Slot selection and key-waypoint generation.

Two interchangeable backends produce a GuidanceResult: a deterministic
heuristic (anchor coverage + free-neighbor contiguity - distance) and a
remote LLM client. The LLM is an untrusted proposer: its reply must parse,
reference a free slot, and pass the same feasibility checks as the heuristic
output, otherwise the heuristic answer is returned with backend
"llm-fallback". Guidance runs once, before driving, never in the loop.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import geom, world
from .errors import NoFreeSlotError

log = logging.getLogger("upark.guidance")

MAX_WAYPOINTS = 12
# LLM waypoints snap to a candidate node within this radius
SNAP_RADIUS = 0.5
# corridor walk: lookahead radius and minimum progress per hop
STEP_RADIUS = 6.0
MIN_PROGRESS = 0.5
# slots whose centers are closer than half-widths plus this slack are neighbors
ADJACENCY_SLACK = 0.5

GDOP_COND_LIMIT = 1e8


@dataclass
class GuidanceWeights:
    w_c: float = 1.0   # coverage
    w_g: float = 0.5   # contiguity
    w_d: float = 0.1   # distance penalty

    def __post_init__(self):
        if min(self.w_c, self.w_g, self.w_d) < 0:
            raise ValueError("guidance weights must be nonnegative")


@dataclass
class SlotScore:
    slot_id: str
    coverage_score: float
    contiguity_score: int
    distance_score: float
    total: float


@dataclass
class GuidanceResult:
    slot_id: str
    waypoints: np.ndarray  # (K, 2)
    backend: str           # heuristic | llm | llm-fallback
    rationale: str


@dataclass(frozen=True)
class SlotView:
    id: str
    center: tuple
    heading: float
    length: float
    width: float
    occupied: bool


@dataclass(frozen=True)
class PlanningContext:
    """Immutable scenario snapshot handed to a guidance backend."""

    bounds_min: tuple
    bounds_max: tuple
    obstacles: tuple   # tuple of ((x, y), ...) polygons
    nodes: tuple       # candidate points ((x, y), ...)
    slots: tuple       # SlotView
    anchors: tuple     # ((x, y), ...)
    pose: tuple        # (x, y, theta)
    timestamp: float

    def serialize(self):
        """Canonical JSON; identical contexts give identical bytes."""
        data = {
            "bounds": {"min": list(self.bounds_min), "max": list(self.bounds_max)},
            "obstacles": [[list(v) for v in poly] for poly in self.obstacles],
            "candidate_nodes": [list(p) for p in self.nodes],
            "slots": [{"id": s.id, "center": list(s.center), "heading": s.heading,
                       "length": s.length, "width": s.width, "occupied": s.occupied}
                      for s in self.slots],
            "anchors": [list(a) for a in self.anchors],
            "vehicle_pose": {"x": self.pose[0], "y": self.pose[1], "theta": self.pose[2]},
            "timestamp": self.timestamp,
        }
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def slot_view(self, slot_id):
        for s in self.slots:
            if s.id == slot_id:
                return s
        return None


def build_context(scenario, nodes, pose, timestamp=0.0):
    return PlanningContext(
        bounds_min=tuple(float(v) for v in scenario.bounds_min),
        bounds_max=tuple(float(v) for v in scenario.bounds_max),
        obstacles=tuple(tuple(tuple(float(c) for c in v) for v in poly)
                        for poly in scenario.obstacles),
        nodes=tuple(tuple(float(c) for c in p) for p in np.asarray(nodes)),
        slots=tuple(SlotView(s.id, tuple(float(c) for c in s.center), s.heading,
                             s.length, s.width, s.occupied)
                    for s in scenario.slots),
        anchors=tuple(tuple(float(c) for c in a.position)
                      for a in sorted(scenario.anchors, key=lambda a: a.id)),
        pose=(pose.x, pose.y, pose.theta),
        timestamp=float(timestamp),
    )


def gdop(anchor_positions, point):
    """Horizontal dilution of precision at a point: sqrt(trace((G^T G)^-1))
    with G rows the unit directions to the anchors; infinity for degenerate
    geometry."""
    anchors = np.asarray(anchor_positions, dtype=float)
    if anchors.shape[0] < 2:
        raise ValueError("gdop needs >= 2 anchors")
    point = np.asarray(point, dtype=float)
    delta = anchors - point
    norms = np.maximum(np.linalg.norm(delta, axis=1), 1e-12)
    g = delta / norms[:, None]
    gtg = g.T @ g
    if np.linalg.cond(gtg) > GDOP_COND_LIMIT:
        return math.inf
    return float(math.sqrt(np.trace(np.linalg.inv(gtg))))


def _ctx_line_of_sight(ctx, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for poly in ctx.obstacles:
        if geom.segment_blocked_by_polygon(a, b, np.asarray(poly)):
            return False
    return True


def _entry_point(slot_view):
    axis = np.array([math.cos(slot_view.heading), math.sin(slot_view.heading)])
    return np.array(slot_view.center) - (0.5 * slot_view.length + world.ENTRY_SETBACK) * axis


def _contiguity(ctx, slot_view):
    """Size of the connected free-slot group containing this slot, where two
    slots neighbor when their centers are within the sum of half widths plus
    slack."""
    frees = [s for s in ctx.slots if not s.occupied]
    centers = {s.id: np.array(s.center) for s in frees}
    if slot_view.id not in centers:
        return 0

    def adjacent(a, b):
        limit = 0.5 * (a.width + b.width) + ADJACENCY_SLACK
        return np.linalg.norm(centers[a.id] - centers[b.id]) <= limit

    group = {slot_view.id}
    frontier = [slot_view]
    by_id = {s.id: s for s in frees}
    while frontier:
        cur = frontier.pop()
        for other in frees:
            if other.id not in group and adjacent(cur, other):
                group.add(other.id)
                frontier.append(by_id[other.id])
    return len(group)


def _node_clearance(ctx, point):
    dists = [point[0] - ctx.bounds_min[0], ctx.bounds_max[0] - point[0],
             point[1] - ctx.bounds_min[1], ctx.bounds_max[1] - point[1]]
    for poly in ctx.obstacles:
        dists.append(geom.point_polygon_distance(point, np.asarray(poly)))
    return min(dists)


def _corridor_waypoints(ctx, start, entry):
    """Greedy clearance-first hop sequence through candidate nodes toward the
    entry point: among nodes within STEP_RADIUS that make at least
    MIN_PROGRESS toward the target, take the clearest (ties: more progress,
    then lexicographic position)."""
    nodes = [np.array(p) for p in ctx.nodes]
    clearances = [_node_clearance(ctx, p) for p in nodes]
    remaining = list(range(len(nodes)))
    p = np.asarray(start, dtype=float)
    picked = []
    while True:
        d_here = np.linalg.norm(p - entry)
        if d_here <= STEP_RADIUS:
            break
        best = None
        best_key = None
        for idx in remaining:
            node = nodes[idx]
            progress = d_here - np.linalg.norm(node - entry)
            if progress < MIN_PROGRESS or np.linalg.norm(node - p) > STEP_RADIUS:
                continue
            key = (clearances[idx], progress, -node[0], -node[1])
            if best_key is None or key > best_key:
                best_key = key
                best = idx
        if best is None:
            break
        picked.append(nodes[best])
        p = nodes[best]
        remaining.remove(best)
    waypoints = picked + [np.asarray(entry, dtype=float)]
    if len(waypoints) > MAX_WAYPOINTS:
        idx = np.unique(np.round(np.linspace(0, len(waypoints) - 1,
                                             MAX_WAYPOINTS)).astype(int))
        waypoints = [waypoints[i] for i in idx]
    return np.array(waypoints)


def score_slots(ctx, weights=None):
    """SlotScore for every free slot, best total first (ties by slot id)."""
    weights = weights or GuidanceWeights()
    pose_xy = np.array(ctx.pose[:2])
    scores = []
    for s in ctx.slots:
        if s.occupied:
            continue
        entry = _entry_point(s)
        los = sum(1 for a in ctx.anchors if _ctx_line_of_sight(ctx, entry, a))
        dop = gdop(ctx.anchors, entry)
        coverage = los + (0.0 if math.isinf(dop) else 1.0 / dop)
        contiguity = _contiguity(ctx, s)
        distance = float(np.linalg.norm(np.array(s.center) - pose_xy))
        total = (weights.w_c * coverage + weights.w_g * contiguity
                 - weights.w_d * distance)
        scores.append(SlotScore(s.id, coverage, contiguity, distance, total))
    scores.sort(key=lambda sc: (-sc.total, sc.slot_id))
    return scores


def heuristic_guidance(ctx, weights=None):
    """Deterministic backend: pick the best-scoring free slot and build the
    corridor waypoints to its entry point."""
    scores = score_slots(ctx, weights)
    if not scores:
        raise NoFreeSlotError("no free slot available")
    best = scores[0]
    slot_view = ctx.slot_view(best.slot_id)
    entry = _entry_point(slot_view)
    waypoints = _corridor_waypoints(ctx, ctx.pose[:2], entry)
    rationale = ("slot %s: coverage %.3f, contiguity %d, distance %.2f m, total %.3f"
                 % (best.slot_id, best.coverage_score, best.contiguity_score,
                    best.distance_score, best.total))
    return GuidanceResult(best.slot_id, waypoints, "heuristic", rationale)


@dataclass
class LlmEndpoint:
    url: str = ""
    key: str = ""
    model: str = ""
    timeout: float = 20.0

    @classmethod
    def from_env(cls):
        return cls(url=os.environ.get("UPARK_LLM_URL", ""),
                   key=os.environ.get("UPARK_LLM_KEY", ""),
                   model=os.environ.get("UPARK_LLM_MODEL", ""))


SYSTEM_PROMPT = (
    "You assign parking slots. Reply with exactly one JSON object "
    '{"slot_id": <string>, "waypoints": [[x,y],...], "reason": <string>} '
    "choosing a free slot from the context and 1-12 waypoints the vehicle "
    "should pass on its way to the slot entry. Coordinates are meters in "
    "the lot frame. No other text."
)


def extract_json_object(text):
    """First balanced {...} block, string-literal aware; None if absent."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find("{", start + 1)
    return None


def _snap_to_nodes(points, ctx):
    if not ctx.nodes:
        return points
    nodes = np.array(ctx.nodes)
    snapped = []
    for p in points:
        d = np.linalg.norm(nodes - p, axis=1)
        i = int(np.argmin(d))
        snapped.append(nodes[i].copy() if d[i] <= SNAP_RADIUS else p)
    return snapped


def _validate_llm_result(ctx, slot_id, waypoints):
    """Reason string when the proposal is unusable, None when valid."""
    slot_view = ctx.slot_view(slot_id)
    if slot_view is None:
        return "unknown slot %r" % slot_id
    if slot_view.occupied:
        return "slot %s is occupied" % slot_id
    if not 1 <= len(waypoints) <= MAX_WAYPOINTS:
        return "waypoint count %d outside [1, %d]" % (len(waypoints), MAX_WAYPOINTS)
    bmin = np.array(ctx.bounds_min)
    bmax = np.array(ctx.bounds_max)
    for p in waypoints:
        if not (np.all(p >= bmin) and np.all(p <= bmax)):
            return "waypoint (%.2f, %.2f) outside bounds" % (p[0], p[1])
        for poly in ctx.obstacles:
            if geom.point_polygon_distance(p, np.asarray(poly)) == 0.0:
                return "waypoint (%.2f, %.2f) inside obstacle" % (p[0], p[1])
    entry = _entry_point(slot_view)
    if np.linalg.norm(waypoints[-1] - entry) > 5.0:
        return "last waypoint farther than 5 m from slot entry"
    return None


def llm_guidance(ctx, endpoint=None, weights=None):
    """Remote-LLM backend with total fallback.

    One chat-completion call at temperature 0; the reply's first balanced
    JSON object is parsed, waypoints are snapped to nearby candidate nodes,
    and the proposal is validated. Any transport, parse, or validation
    failure falls back to heuristic_guidance with backend "llm-fallback".
    """
    endpoint = endpoint or LlmEndpoint.from_env()
    failure = None
    if not endpoint.url:
        failure = "no endpoint configured"
    else:
        try:
            import requests

            headers = {"Content-Type": "application/json"}
            if endpoint.key:
                headers["Authorization"] = "Bearer " + endpoint.key
            payload = {
                "model": endpoint.model or "default",
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": SYSTEM_PROMPT},
                    {"role": "user", "content": ctx.serialize()},
                ],
            }
            resp = requests.post(endpoint.url, json=payload, headers=headers,
                                 timeout=endpoint.timeout)
            resp.raise_for_status()
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
            block = extract_json_object(content)
            if block is None:
                raise ValueError("no JSON object in reply")
            reply = json.loads(block)
            if not isinstance(reply.get("slot_id"), str):
                raise ValueError("reply slot_id missing or not a string")
            raw_points = reply.get("waypoints")
            if (not isinstance(raw_points, list)
                    or not all(isinstance(p, (list, tuple)) and len(p) == 2
                               for p in raw_points)):
                raise ValueError("reply waypoints malformed")
            points = [np.array([float(p[0]), float(p[1])]) for p in raw_points]
            points = _snap_to_nodes(points, ctx)
            reason = reply.get("reason", "")
            if not isinstance(reason, str):
                reason = str(reason)
            problem = _validate_llm_result(ctx, reply["slot_id"], points)
            if problem is not None:
                raise ValueError(problem)
            return GuidanceResult(reply["slot_id"], np.array(points), "llm", reason)
        except Exception as exc:  # fallback is total by contract
            failure = "%s: %s" % (type(exc).__name__, exc)
    log.warning("llm guidance fell back to heuristic (%s)", failure)
    result = heuristic_guidance(ctx, weights)
    return GuidanceResult(result.slot_id, result.waypoints, "llm-fallback",
                          "fallback (%s); %s" % (failure, result.rationale))
