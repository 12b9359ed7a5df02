"""Seeded sensor simulation: UWB ranging with LOS/NLOS regimes and dropout,
plus gyro + wheel-speed odometry.

Determinism contract: every call consumes a fixed number of generator draws
regardless of outcome (draw-then-discard), so dropped samples and regime
switches never shift the stream. Ranging draws 4 values per anchor in
ascending anchor-id order (dropout, LOS noise, bias, NLOS noise); an IMU
sample draws 2 (gyro, speed). Identical seed + call sequence gives
bitwise-identical streams.
"""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import geom, world

# re-exported: the profile is embedded in scenario files but consumed here
NoiseProfile = world.NoiseProfile

LOS = "LOS"
NLOS = "NLOS"

# floor applied to corrupted distances
MIN_RANGE = 0.01


@dataclass
class RangingSample:
    anchor_id: int
    distance: float
    timestamp: float
    regime: str  # LOS or NLOS ground-truth label, for evaluation only


@dataclass
class ImuSample:
    yaw_rate: float
    speed: float
    timestamp: float


UNIFORM_DRAW = 0
NORMAL_DRAW = 1


class NoiseStream:
    """Seeded generator wrapper that hashes every raw draw.

    The digest identifies the exact noise sequence a run consumed, so two
    runs can prove they saw identical sensor randomness. In precomputed mode
    the whole draw table is generated (and hashed) up front from a declared
    kind schedule; consumers then read prefixes of one fixed stream, which
    makes the digest independent of how much of it a run used.
    """

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self._hash = hashlib.sha256()
        self._table = None
        self._kinds = None
        self._digest = None
        self.draw_count = 0

    @classmethod
    def precomputed(cls, seed, kinds):
        """Stream backed by a pregenerated table: kinds is a sequence of
        UNIFORM_DRAW / NORMAL_DRAW in exact consumption order."""
        stream = cls(seed)
        kinds = np.asarray(kinds, dtype=np.uint8)
        table = np.empty(len(kinds))
        for i, kind in enumerate(kinds):
            table[i] = (stream._rng.uniform() if kind == UNIFORM_DRAW
                        else stream._rng.standard_normal())
        stream._table = table
        stream._kinds = kinds
        stream._digest = hashlib.sha256(
            table.astype("<f8").tobytes()).hexdigest()
        return stream

    def _from_table(self, kind):
        if self.draw_count >= len(self._table):
            raise RuntimeError("noise table exhausted after %d draws"
                               % self.draw_count)
        if self._kinds[self.draw_count] != kind:
            raise RuntimeError("draw kind mismatch at index %d"
                               % self.draw_count)
        value = float(self._table[self.draw_count])
        self.draw_count += 1
        return value

    def uniform(self):
        if self._table is not None:
            return self._from_table(UNIFORM_DRAW)
        value = self._rng.uniform()
        self._hash.update(struct.pack("<d", value))
        self.draw_count += 1
        return value

    def standard_normal(self):
        if self._table is not None:
            return self._from_table(NORMAL_DRAW)
        value = self._rng.standard_normal()
        self._hash.update(struct.pack("<d", value))
        self.draw_count += 1
        return value

    def digest(self):
        if self._digest is not None:
            return self._digest
        return self._hash.hexdigest()


def ranging_regime(scenario, anchor, true_pos):
    """LOS iff the anchor is visible and the vehicle is outside every extra
    bias zone (zone boundaries count as outside)."""
    if not world.line_of_sight(scenario, true_pos, anchor.position):
        return NLOS
    for zone in scenario.nlos_zones:
        if geom.point_in_polygon(true_pos, zone, strict=True):
            return NLOS
    return LOS


def sample_ranging(scenario, true_pos, t, rng):
    """One RangingSample per anchor (ascending id) unless dropped.

    LOS: d = truth + N(0, los_sigma). NLOS: d = truth +
    max(0, N(bias_mean, bias_sigma)) + N(0, nlos_sigma). Distances floored
    at MIN_RANGE.
    """
    noise = scenario.noise
    true_pos = np.asarray(true_pos, dtype=float)
    samples = []
    for anchor in sorted(scenario.anchors, key=lambda a: a.id):
        u_drop = rng.uniform()
        z_los = rng.standard_normal()
        z_bias = rng.standard_normal()
        z_nlos = rng.standard_normal()
        regime = ranging_regime(scenario, anchor, true_pos)
        truth = float(np.hypot(*(true_pos - anchor.position)))
        if regime == LOS:
            if u_drop < noise.dropout_prob_los:
                continue
            d = truth + noise.los_sigma * z_los
        else:
            if u_drop < noise.dropout_prob_nlos:
                continue
            bias = max(0.0, noise.nlos_bias_mean + noise.nlos_bias_sigma * z_bias)
            d = truth + bias + noise.nlos_sigma * z_nlos
        samples.append(RangingSample(anchor.id, max(d, MIN_RANGE), t, regime))
    return samples


def sample_imu(scenario, true_state, t, rng):
    """Gyro + wheel-speed reading from the true motion state (any object
    with v and omega attributes)."""
    noise = scenario.noise
    z_gyro = rng.standard_normal()
    z_speed = rng.standard_normal()
    yaw_rate = true_state.omega + noise.imu_gyro_bias + noise.imu_gyro_sigma * z_gyro
    speed = true_state.v + noise.imu_speed_sigma * z_speed
    return ImuSample(yaw_rate, speed, t)
