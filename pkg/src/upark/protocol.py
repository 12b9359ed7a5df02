"""Vehicle-server wire protocol.

Messages are dataclasses in a tagged union; the codec frames each one as a
4-byte big-endian body length followed by canonical UTF-8 JSON (sorted keys,
no whitespace) with a "type" discriminator. Bodies above 1 MiB are rejected
from the length prefix alone, before any body bytes are consumed.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError
from .planning import ReferenceTrajectory
from .world import Pose2D

MAX_FRAME = 1 << 20

PHASE_DRIVING = "driving"
PHASE_PARKING = "parking"
PHASE_DONE = "done"
PHASE_FAILED = "failed"
PHASES = (PHASE_DRIVING, PHASE_PARKING, PHASE_DONE, PHASE_FAILED)


@dataclass
class Register:
    vehicle_id: str


@dataclass
class RegisterAck:
    session_id: str


@dataclass
class ParkRequest:
    session_id: str
    pose: Pose2D


@dataclass
class SlotAssignment:
    session_id: str
    slot_id: str
    trajectory: ReferenceTrajectory

    def __eq__(self, other):
        if not isinstance(other, SlotAssignment):
            return NotImplemented
        a, b = self.trajectory, other.trajectory
        return (self.session_id == other.session_id
                and self.slot_id == other.slot_id
                and all(np.array_equal(getattr(a, f), getattr(b, f))
                        for f in ("t", "x", "y", "theta", "v", "gear", "phase")))


@dataclass
class PoseReport:
    session_id: str
    x: float
    y: float
    theta: float
    reliability: float
    t: float


@dataclass
class StatusUpdate:
    session_id: str
    phase: str

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ProtocolError("unknown phase %r" % (self.phase,))


@dataclass
class Completion:
    session_id: str
    pose: Pose2D
    euclidean_max: float
    euclidean_mean: float
    dtw_normalized: float


@dataclass
class Error:
    code: str
    detail: str


def _pose_body(pose):
    return {"theta": float(pose.theta), "x": float(pose.x), "y": float(pose.y)}


def _pose_from(body):
    _check_fields(body, {"x", "y", "theta"}, "pose")
    return Pose2D(_num(body["x"]), _num(body["y"]), _num(body["theta"]))


def _traj_body(traj):
    return {
        "gear": [int(g) for g in traj.gear],
        "phase": [str(p) for p in traj.phase],
        "t": [float(v) for v in traj.t],
        "theta": [float(v) for v in traj.theta],
        "v": [float(v) for v in traj.v],
        "x": [float(v) for v in traj.x],
        "y": [float(v) for v in traj.y],
    }


def _traj_from(body):
    _check_fields(body, {"t", "x", "y", "theta", "v", "gear", "phase"},
                  "trajectory")
    try:
        t = np.array([float(v) for v in body["t"]])
        x = np.array([float(v) for v in body["x"]])
        y = np.array([float(v) for v in body["y"]])
        theta = np.array([float(v) for v in body["theta"]])
        v = np.array([float(val) for val in body["v"]])
        gear = np.array([int(g) for g in body["gear"]])
        phase = np.array([str(p) for p in body["phase"]])
    except (TypeError, ValueError) as exc:
        raise ProtocolError("malformed trajectory: %s" % exc) from None
    n = len(t)
    if n == 0 or any(len(a) != n for a in (x, y, theta, v, gear, phase)):
        raise ProtocolError("trajectory arrays empty or length-mismatched")
    return ReferenceTrajectory(t, x, y, theta, v, gear, phase)


def _check_fields(body, required, ctx):
    if not isinstance(body, dict):
        raise ProtocolError("%s body must be an object" % ctx)
    present = set(body) - {"type"}
    missing = required - present
    extra = present - required
    if missing:
        raise ProtocolError("%s missing fields: %s" % (ctx, sorted(missing)))
    if extra:
        raise ProtocolError("%s has unknown fields: %s" % (ctx, sorted(extra)))


def _str(value, name="field"):
    if not isinstance(value, str):
        raise ProtocolError("%s must be a string" % name)
    return value


def _num(value, name="field"):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError("%s must be a number" % name)
    return float(value)


def _encode_body(msg):
    if isinstance(msg, Register):
        return {"type": "register", "vehicle_id": msg.vehicle_id}
    if isinstance(msg, RegisterAck):
        return {"type": "register_ack", "session_id": msg.session_id}
    if isinstance(msg, ParkRequest):
        return {"type": "park_request", "session_id": msg.session_id,
                "pose": _pose_body(msg.pose)}
    if isinstance(msg, SlotAssignment):
        return {"type": "slot_assignment", "session_id": msg.session_id,
                "slot_id": msg.slot_id,
                "trajectory": _traj_body(msg.trajectory)}
    if isinstance(msg, PoseReport):
        return {"type": "pose_report", "session_id": msg.session_id,
                "x": float(msg.x), "y": float(msg.y),
                "theta": float(msg.theta),
                "reliability": float(msg.reliability), "t": float(msg.t)}
    if isinstance(msg, StatusUpdate):
        return {"type": "status_update", "session_id": msg.session_id,
                "phase": msg.phase}
    if isinstance(msg, Completion):
        return {"type": "completion", "session_id": msg.session_id,
                "pose": _pose_body(msg.pose),
                "euclidean_max": float(msg.euclidean_max),
                "euclidean_mean": float(msg.euclidean_mean),
                "dtw_normalized": float(msg.dtw_normalized)}
    if isinstance(msg, Error):
        return {"type": "error", "code": msg.code, "detail": msg.detail}
    raise ProtocolError("cannot encode %r" % type(msg).__name__)


def _decode_register(body):
    _check_fields(body, {"vehicle_id"}, "register")
    return Register(_str(body["vehicle_id"], "vehicle_id"))


def _decode_register_ack(body):
    _check_fields(body, {"session_id"}, "register_ack")
    return RegisterAck(_str(body["session_id"], "session_id"))


def _decode_park_request(body):
    _check_fields(body, {"session_id", "pose"}, "park_request")
    return ParkRequest(_str(body["session_id"], "session_id"),
                       _pose_from(body["pose"]))


def _decode_slot_assignment(body):
    _check_fields(body, {"session_id", "slot_id", "trajectory"},
                  "slot_assignment")
    return SlotAssignment(_str(body["session_id"], "session_id"),
                          _str(body["slot_id"], "slot_id"),
                          _traj_from(body["trajectory"]))


def _decode_pose_report(body):
    _check_fields(body, {"session_id", "x", "y", "theta", "reliability", "t"},
                  "pose_report")
    return PoseReport(_str(body["session_id"], "session_id"),
                      _num(body["x"], "x"), _num(body["y"], "y"),
                      _num(body["theta"], "theta"),
                      _num(body["reliability"], "reliability"),
                      _num(body["t"], "t"))


def _decode_status_update(body):
    _check_fields(body, {"session_id", "phase"}, "status_update")
    return StatusUpdate(_str(body["session_id"], "session_id"),
                        _str(body["phase"], "phase"))


def _decode_completion(body):
    _check_fields(body, {"session_id", "pose", "euclidean_max",
                         "euclidean_mean", "dtw_normalized"}, "completion")
    return Completion(_str(body["session_id"], "session_id"),
                      _pose_from(body["pose"]),
                      _num(body["euclidean_max"], "euclidean_max"),
                      _num(body["euclidean_mean"], "euclidean_mean"),
                      _num(body["dtw_normalized"], "dtw_normalized"))


def _decode_error(body):
    _check_fields(body, {"code", "detail"}, "error")
    return Error(_str(body["code"], "code"), _str(body["detail"], "detail"))


_DECODERS = {
    "register": _decode_register,
    "register_ack": _decode_register_ack,
    "park_request": _decode_park_request,
    "slot_assignment": _decode_slot_assignment,
    "pose_report": _decode_pose_report,
    "status_update": _decode_status_update,
    "completion": _decode_completion,
    "error": _decode_error,
}


def encode(msg):
    """Message to wire frame (length prefix + canonical JSON body)."""
    body = json.dumps(_encode_body(msg), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise ProtocolError("frame body of %d bytes exceeds the %d cap"
                            % (len(body), MAX_FRAME))
    return struct.pack(">I", len(body)) + body


def decode(frame):
    """Wire frame back to a message. The declared length is bounds-checked
    before the body is touched."""
    if len(frame) < 4:
        raise ProtocolError("truncated frame: missing length prefix")
    (length,) = struct.unpack(">I", frame[:4])
    if length > MAX_FRAME:
        raise ProtocolError("declared frame length %d exceeds the %d cap"
                            % (length, MAX_FRAME))
    if len(frame) != 4 + length:
        raise ProtocolError("truncated frame: declared %d bytes, got %d"
                            % (length, len(frame) - 4))
    return decode_body(frame[4:])


def decode_body(body_bytes):
    try:
        body = json.loads(body_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("malformed frame body: %s" % exc) from None
    if not isinstance(body, dict) or "type" not in body:
        raise ProtocolError("frame body lacks a type discriminator")
    decoder = _DECODERS.get(body["type"])
    if decoder is None:
        raise ProtocolError("unknown message type %r" % (body["type"],))
    return decoder(body)


def write_message(stream, msg):
    stream.write(encode(msg))
    stream.flush()


def read_message(stream):
    """Next message from a blocking byte stream, or None on clean EOF."""
    header = stream.read(4)
    if header == b"":
        return None
    if len(header) < 4:
        raise ProtocolError("truncated frame: short length prefix")
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ProtocolError("declared frame length %d exceeds the %d cap"
                            % (length, MAX_FRAME))
    body = b""
    while len(body) < length:
        chunk = stream.read(length - len(body))
        if not chunk:
            raise ProtocolError("truncated frame: body ended early")
        body += chunk
    return decode_body(body)
