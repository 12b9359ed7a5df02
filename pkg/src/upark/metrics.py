"""Trajectory accuracy metrics: polyline Euclidean error and normalized
dynamic time warping."""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import accel


@dataclass
class MetricsReport:
    method: str
    scenario_id: str
    seed: int
    success: bool
    euclidean_max: float
    euclidean_mean: float
    dtw_normalized_mean: float
    terminal_position_error: float
    terminal_lateral_error: float
    terminal_heading_error: float
    stream_digest: str = ""

    def __post_init__(self):
        if math.isfinite(self.euclidean_max) and math.isfinite(self.euclidean_mean):
            if not 0.0 <= self.euclidean_mean <= self.euclidean_max + 1e-12:
                raise ValueError("need 0 <= mean <= max euclidean error")
        if math.isfinite(self.dtw_normalized_mean) and self.dtw_normalized_mean < 0:
            raise ValueError("dtw must be nonnegative")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _as_points(seq):
    pts = np.asarray(seq, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] < 2:
        raise ValueError("need a nonempty (N, >=2) point sequence")
    return np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1])


def _reference_points(reference):
    if hasattr(reference, "x") and hasattr(reference, "y"):
        pts = np.column_stack([reference.x, reference.y])
    else:
        pts = np.asarray(reference, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("reference must be a nonempty point sequence")
    if pts.shape[0] > 1:
        step = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        keep = np.concatenate([[True], step > 1e-12])
        pts = pts[keep]
    return pts


def euclidean_errors(executed, reference):
    """(max, mean) distance from each executed position to the nearest point
    on the reference polyline (projected onto segments, not vertex-only).
    reference may be a trajectory object with x/y arrays or an (M, 2) array.
    """
    px, py = _as_points(executed)
    ref = _reference_points(reference)
    qx = np.ascontiguousarray(ref[:, 0])
    qy = np.ascontiguousarray(ref[:, 1])
    d = accel.polyline_min_distances(px, py, qx, qy)
    return float(np.max(d)), float(np.mean(d))


def dtw_normalized(executed, reference):
    """Classic full-window DTW with Euclidean point cost, normalized by the
    warping-path length."""
    ax, ay = _as_points(executed)
    ref = np.asarray(reference, dtype=float)
    if hasattr(reference, "x") and hasattr(reference, "y"):
        ref = np.column_stack([reference.x, reference.y])
    bx, by = _as_points(ref)
    cost, path_len = accel.dtw_accumulate(ax, ay, bx, by)
    return float(cost / path_len)
