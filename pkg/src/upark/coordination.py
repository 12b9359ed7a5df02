"""Parking-lot server and vehicle agents.

The server owns slot availability, runs guidance + planning on request, and
hands each vehicle a reference trajectory; vehicles localize and track. All
state changes go through `server_handle`, a pure transition function from
(state, message) to (new state, replies), which makes interleaving behavior
testable without real concurrency. Session lifecycle: registered ->
assigned -> driving -> parking -> done | failed (the request step is
transient since assignment is synchronous). A reservation is released on
failure or disconnect and kept on completion.

Two transports share the wire codec: an in-process channel for
deterministic tests and a TCP demo mode.
"""

import logging
import socket
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import control, guidance, harness, planning, protocol, world
from .errors import (ManeuverInfeasibleError, NoFreeSlotError, ProtocolError,
                     SmoothingInfeasibleError, UnreachableGoalError)

log = logging.getLogger("upark.coordination")

REGISTERED = "registered"
ASSIGNED = "assigned"
DRIVING = "driving"
PARKING = "parking"
DONE = "done"
FAILED = "failed"

ACTIVE_STATES = (ASSIGNED, DRIVING, PARKING)
DEFAULT_PORT = 7788


@dataclass(frozen=True)
class Session:
    vehicle_id: str
    state: str
    slot_id: Optional[str] = None
    reserved_at: int = -1


@dataclass(frozen=True)
class ServerState:
    scenario: world.LotScenario
    grid: world.OccupancyGrid
    nodes: np.ndarray
    sessions: dict
    counter: int = 0
    event_index: int = 0
    guidance_backend: str = "heuristic"
    llm_endpoint: Optional[guidance.LlmEndpoint] = None
    vehicle_width: float = planning.DEFAULT_VEHICLE_WIDTH
    r_min: float = planning.DEFAULT_R_MIN
    v_max: float = planning.DEFAULT_V_MAX
    a_max: float = planning.DEFAULT_A_MAX
    initial_occupied: int = 0

    @classmethod
    def create(cls, scenario, guidance_backend="heuristic", llm_endpoint=None,
               vehicle_width=planning.DEFAULT_VEHICLE_WIDTH,
               r_min=planning.DEFAULT_R_MIN, v_max=planning.DEFAULT_V_MAX,
               a_max=planning.DEFAULT_A_MAX):
        grid = world.rasterize(scenario, world.default_inflation(vehicle_width))
        nodes = world.extract_candidate_nodes(grid, scenario)
        occupied = sum(1 for s in scenario.slots if s.occupied)
        return cls(scenario=scenario, grid=grid, nodes=nodes, sessions={},
                   guidance_backend=guidance_backend, llm_endpoint=llm_endpoint,
                   vehicle_width=vehicle_width, r_min=r_min, v_max=v_max,
                   a_max=a_max, initial_occupied=occupied)


def active_reservations(state):
    return sum(1 for s in state.sessions.values()
               if s.state in ACTIVE_STATES or s.state == DONE)


def reservation_invariant(state):
    """Occupied slots = initially occupied + assigned-or-done sessions."""
    occupied = sum(1 for s in state.scenario.slots if s.occupied)
    return occupied == state.initial_occupied + active_reservations(state)


def _with_session(state, sid, session, **changes):
    sessions = dict(state.sessions)
    sessions[sid] = session
    return replace(state, sessions=sessions, **changes)


def _assign(state, pose):
    """Slot choice + full plan for a request pose; raises on failure."""
    ctx = guidance.build_context(state.scenario, state.nodes, pose)
    if state.guidance_backend == "llm":
        chosen = guidance.llm_guidance(ctx, state.llm_endpoint)
    else:
        chosen = guidance.heuristic_guidance(ctx)
    plan = planning.plan_parking(state.scenario, chosen.slot_id,
                                 waypoints=chosen.waypoints, start_pose=pose,
                                 vehicle_width=state.vehicle_width,
                                 r_min=state.r_min, v_max=state.v_max,
                                 a_max=state.a_max, grid=state.grid)
    return chosen.slot_id, plan.trajectory


def server_handle(state, msg):
    """Pure transition: (state, message) -> (new state, replies).

    Illegal transitions reply with an error and leave the state unchanged
    (except the event counter). Slot occupancy is only committed after
    planning succeeds, so failures need no rollback.
    """
    tick = state.event_index + 1
    bumped = replace(state, event_index=tick)

    if isinstance(msg, protocol.Register):
        sid = "S%d" % (state.counter + 1)
        session = Session(vehicle_id=msg.vehicle_id, state=REGISTERED)
        new = _with_session(bumped, sid, session, counter=state.counter + 1)
        return new, [protocol.RegisterAck(sid)]
    if isinstance(msg, protocol.Error):
        log.warning("vehicle error: %s: %s", msg.code, msg.detail)
        return bumped, []

    sid = getattr(msg, "session_id", None)
    session = state.sessions.get(sid)
    if session is None:
        return bumped, [protocol.Error("unknown-session",
                                       "no session %r" % (sid,))]

    if isinstance(msg, protocol.ParkRequest):
        if session.state != REGISTERED:
            return bumped, [_illegal(session, "park_request")]
        try:
            slot_id, trajectory = _assign(state, msg.pose)
        except NoFreeSlotError as exc:
            return bumped, [protocol.Error("no-free-slot", str(exc))]
        except (UnreachableGoalError, SmoothingInfeasibleError,
                ManeuverInfeasibleError, ValueError) as exc:
            return bumped, [protocol.Error("planning-failure", str(exc))]
        scenario = world.set_slot_occupancy(state.scenario, slot_id, True)
        new = _with_session(
            bumped, sid,
            replace(session, state=ASSIGNED, slot_id=slot_id, reserved_at=tick),
            scenario=scenario)
        return new, [protocol.SlotAssignment(sid, slot_id, trajectory)]

    if isinstance(msg, protocol.PoseReport):
        if session.state in ACTIVE_STATES:
            return bumped, []
        return bumped, [_illegal(session, "pose_report")]

    if isinstance(msg, protocol.StatusUpdate):
        edges = {
            protocol.PHASE_DRIVING: ((ASSIGNED,), DRIVING),
            protocol.PHASE_PARKING: ((ASSIGNED, DRIVING), PARKING),
            protocol.PHASE_DONE: ((PARKING,), DONE),
            protocol.PHASE_FAILED: (ACTIVE_STATES, FAILED),
        }
        sources, target = edges[msg.phase]
        if session.state not in sources:
            return bumped, [_illegal(session, "status_update(%s)" % msg.phase)]
        new = _with_session(bumped, sid, replace(session, state=target))
        if target == FAILED and session.slot_id is not None:
            new = replace(new, scenario=world.set_slot_occupancy(
                new.scenario, session.slot_id, False))
        return new, []

    if isinstance(msg, protocol.Completion):
        if session.state not in ACTIVE_STATES:
            return bumped, [_illegal(session, "completion")]
        # slot stays occupied: the vehicle is parked in it
        new = _with_session(bumped, sid, replace(session, state=DONE))
        return new, []

    return bumped, [protocol.Error("unsupported", type(msg).__name__)]


def _illegal(session, what):
    return protocol.Error("illegal-transition",
                          "%s not allowed in state %s" % (what, session.state))


def server_disconnect(state, sid):
    """Connection loss: release the reservation of a still-active session."""
    session = state.sessions.get(sid)
    if session is None or session.state in (DONE, FAILED):
        return state
    new = _with_session(state, sid, replace(session, state=FAILED),
                        event_index=state.event_index + 1)
    if session.slot_id is not None:
        new = replace(new, scenario=world.set_slot_occupancy(
            new.scenario, session.slot_id, False))
    return new


class InProcessServer:
    """Single-threaded server core: submit() applies one message and returns
    the replies, so tests control interleaving exactly."""

    def __init__(self, scenario, **kwargs):
        self.state = ServerState.create(scenario, **kwargs)

    def submit(self, msg):
        self.state, replies = server_handle(self.state, msg)
        return replies

    def disconnect(self, sid):
        self.state = server_disconnect(self.state, sid)


class InProcessTransport:
    """Client endpoint bound to an InProcessServer."""

    def __init__(self, server):
        self.server = server
        self._pending = deque()
        self._sid = None
        self._closed = False

    def send(self, msg):
        if self._closed:
            raise ProtocolError("transport closed")
        replies = self.server.submit(msg)
        for reply in replies:
            if isinstance(reply, protocol.RegisterAck):
                self._sid = reply.session_id
        self._pending.extend(replies)

    def receive(self):
        return self._pending.popleft() if self._pending else None

    def close(self):
        if not self._closed:
            self._closed = True
            if self._sid is not None:
                self.server.disconnect(self._sid)


class TcpTransport:
    """Blocking client endpoint over a socket."""

    def __init__(self, host, port):
        self._sock = socket.create_connection((host, port))
        self._stream = self._sock.makefile("rwb")

    def send(self, msg):
        protocol.write_message(self._stream, msg)

    def receive(self):
        return protocol.read_message(self._stream)

    def close(self):
        try:
            self._stream.close()
        finally:
            self._sock.close()


class TcpServer:
    """Thread-per-connection front end over the same transition function.

    A lock serializes every server_handle application, so outcomes match the
    in-process transport for the same message order.
    """

    def __init__(self, scenario, host="127.0.0.1", port=DEFAULT_PORT, **kwargs):
        self.state = ServerState.create(scenario, **kwargs)
        self._lock = threading.Lock()
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._threads = []

    def serve_forever(self):
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            worker = threading.Thread(target=self._client, args=(conn,),
                                      daemon=True)
            worker.start()
            self._threads.append(worker)

    def start(self):
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        self._threads.append(thread)
        return thread

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        for worker in self._threads:
            worker.join(timeout=5.0)

    def _client(self, conn):
        stream = conn.makefile("rwb")
        sid = None
        try:
            while True:
                msg = protocol.read_message(stream)
                if msg is None:
                    break
                with self._lock:
                    self.state, replies = server_handle(self.state, msg)
                for reply in replies:
                    if isinstance(reply, protocol.RegisterAck):
                        sid = reply.session_id
                    protocol.write_message(stream, reply)
        except ProtocolError as exc:
            log.warning("protocol error, dropping connection: %s", exc)
            try:
                protocol.write_message(stream, protocol.Error("protocol", str(exc)))
            except OSError:
                pass
        except OSError as exc:
            log.warning("connection lost: %s", exc)
        finally:
            with self._lock:
                self.state = server_disconnect(self.state, sid)
            try:
                stream.close()
            finally:
                conn.close()


@dataclass
class AgentOutcome:
    vehicle_id: str
    session_id: Optional[str]
    slot_id: Optional[str]
    success: bool
    reason: str
    report: Optional[object] = None
    log: Optional[control.TrajectoryLog] = None


class VehicleAgent:
    """One vehicle's session: register, request, then track the assignment
    with the configured localization method, reporting pose at 1 Hz."""

    def __init__(self, scenario, vehicle_id, transport, method="integrated",
                 seed=0):
        self.scenario = scenario
        self.vehicle_id = vehicle_id
        self.transport = transport
        self.method = harness.method_config(method) if isinstance(method, str) \
            else method
        self.seed = seed
        self.session_id = None
        self.slot_id = None
        self.trajectory = None

    def register(self):
        self.transport.send(protocol.Register(self.vehicle_id))
        reply = self.transport.receive()
        if not isinstance(reply, protocol.RegisterAck):
            raise ProtocolError("expected registration ack, got %r" % (reply,))
        self.session_id = reply.session_id

    def request(self):
        self.transport.send(protocol.ParkRequest(self.session_id,
                                                 self.scenario.entry_pose))
        reply = self.transport.receive()
        if isinstance(reply, protocol.SlotAssignment):
            self.slot_id = reply.slot_id
            self.trajectory = reply.trajectory
            return None
        if isinstance(reply, protocol.Error):
            return reply
        raise ProtocolError("expected assignment or error, got %r" % (reply,))

    def execute(self, mpc_cfg=None):
        if self.trajectory is None:
            return AgentOutcome(self.vehicle_id, self.session_id, None, False,
                                "no assignment")
        traj = self.trajectory
        cfg = mpc_cfg or control.MpcConfig()
        stream = harness.make_stream(self.scenario, traj, self.seed, cfg)
        estimator = harness.build_estimator(self.method, self.scenario,
                                            self.scenario.entry_pose)
        plant = harness.SimPlant(self.scenario, estimator, stream,
                                 self.scenario.entry_pose)
        self.transport.send(protocol.StatusUpdate(self.session_id,
                                                  protocol.PHASE_DRIVING))
        state = {"parking_sent": False, "last_report": 0.0}

        def on_step(t, est, rel):
            phase = traj.lookup(t)[5]
            if phase == planning.PARK and not state["parking_sent"]:
                self.transport.send(protocol.StatusUpdate(
                    self.session_id, protocol.PHASE_PARKING))
                state["parking_sent"] = True
            if t - state["last_report"] >= 1.0 - 1e-9:
                state["last_report"] = t
                self.transport.send(protocol.PoseReport(
                    self.session_id, float(est.x), float(est.y),
                    float(est.theta), float(rel), float(t)))

        try:
            result = control.track(traj, plant, cfg,
                                   adaptive=self.method.adaptive_mpc,
                                   on_step=on_step)
        except (ProtocolError, OSError) as exc:
            log.warning("vehicle %s transport lost mid-run: %s",
                        self.vehicle_id, exc)
            return AgentOutcome(self.vehicle_id, self.session_id, self.slot_id,
                                False, "transport lost: %s" % exc)
        final = plant.true_state().pose
        report = harness.evaluate_log(self.scenario, self.slot_id, traj,
                                      result.log, self.method.name, self.seed,
                                      result.success, final, stream.digest())
        try:
            if result.success:
                if not state["parking_sent"]:
                    self.transport.send(protocol.StatusUpdate(
                        self.session_id, protocol.PHASE_PARKING))
                self.transport.send(protocol.Completion(
                    self.session_id, final, report.euclidean_max,
                    report.euclidean_mean, report.dtw_normalized_mean))
            else:
                self.transport.send(protocol.StatusUpdate(
                    self.session_id, protocol.PHASE_FAILED))
        except (ProtocolError, OSError) as exc:
            log.warning("vehicle %s could not report outcome: %s",
                        self.vehicle_id, exc)
        return AgentOutcome(self.vehicle_id, self.session_id, self.slot_id,
                            result.success, result.reason, report, result.log)


def vehicle_agent(scenario, vehicle_id, transport, method="integrated",
                  seed=0, mpc_cfg=None):
    """Full single-vehicle session over an already-connected transport."""
    agent = VehicleAgent(scenario, vehicle_id, transport, method, seed)
    try:
        agent.register()
        error = agent.request()
        if error is not None:
            return AgentOutcome(vehicle_id, agent.session_id, None, False,
                                "%s: %s" % (error.code, error.detail))
        return agent.execute(mpc_cfg)
    finally:
        transport.close()


def run_fleet(scenario, vehicle_ids, make_transport, method="integrated",
              base_seed=0, mpc_cfg=None):
    """Deterministic multi-vehicle fixture: all vehicles register and
    request in id order (so assignments see each other's reservations), then
    execute in the same order."""
    agents = [VehicleAgent(scenario, vid, make_transport(), method,
                           base_seed + i)
              for i, vid in enumerate(vehicle_ids)]
    outcomes = []
    try:
        for agent in agents:
            agent.register()
        errors = {agent.vehicle_id: agent.request() for agent in agents}
        for agent in agents:
            error = errors[agent.vehicle_id]
            if error is not None:
                outcomes.append(AgentOutcome(
                    agent.vehicle_id, agent.session_id, None, False,
                    "%s: %s" % (error.code, error.detail)))
            else:
                outcomes.append(agent.execute(mpc_cfg))
    finally:
        for agent in agents:
            agent.transport.close()
    return outcomes
