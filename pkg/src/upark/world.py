"""Parking-lot world model: scenario files, occupancy rasterization, sight
lines, and candidate-node extraction.

Scenario documents are strict UTF-8 JSON (unknown keys rejected, lengths in
meters, angles in radians). A loaded LotScenario is immutable in practice;
slot occupancy changes go through set_slot_occupancy which returns an updated
copy. Slot footprints are never rasterized as obstacles - vehicles must be
able to enter them - and sight lines are blocked by obstacle polygons only.
"""

import copy
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt

from . import accel, geom
from .errors import ScenarioError

# vehicle clearance margin beyond the half width
INFLATION_MARGIN = 0.1
# minimum spacing between candidate nodes
NODE_SPACING = 2.0


def default_inflation(vehicle_width):
    return 0.5 * vehicle_width + INFLATION_MARGIN


# how far outside the slot mouth the approach point sits
ENTRY_SETBACK = 1.5


def slot_entry_point(slot, setback=ENTRY_SETBACK):
    """Approach point on the aisle side of the slot mouth. The slot heading
    points into the slot, so the mouth is on the -heading side."""
    axis = np.array([math.cos(slot.heading), math.sin(slot.heading)])
    return slot.center - (0.5 * slot.length + setback) * axis


@dataclass
class Pose2D:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        self.x = float(self.x)
        self.y = float(self.y)
        self.theta = geom.wrap_angle(float(self.theta))

    @property
    def position(self):
        return np.array([self.x, self.y])

    def as_array(self):
        return np.array([self.x, self.y, self.theta])


@dataclass(eq=False)
class Anchor:
    id: int
    position: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)

    def __eq__(self, other):
        if not isinstance(other, Anchor):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.position, other.position)


@dataclass(eq=False)
class ParkingSlot:
    id: str
    center: np.ndarray
    heading: float
    length: float
    width: float
    occupied: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.heading = geom.wrap_angle(float(self.heading))

    def polygon(self):
        """Slot rectangle corners, counter-clockwise."""
        axis = np.array([math.cos(self.heading), math.sin(self.heading)])
        side = np.array([-axis[1], axis[0]])
        half_l = 0.5 * self.length * axis
        half_w = 0.5 * self.width * side
        c = self.center
        return np.array([c - half_l - half_w, c + half_l - half_w,
                         c + half_l + half_w, c - half_l + half_w])

    def __eq__(self, other):
        if not isinstance(other, ParkingSlot):
            return NotImplemented
        return (self.id == other.id
                and np.array_equal(self.center, other.center)
                and self.heading == other.heading
                and self.length == other.length
                and self.width == other.width
                and self.occupied == other.occupied)


@dataclass
class NoiseProfile:
    """Ranging and IMU corruption model, embedded in the scenario file."""

    los_sigma: float = 0.05
    nlos_bias_mean: float = 0.8
    nlos_bias_sigma: float = 0.4
    nlos_sigma: float = 0.3
    dropout_prob_los: float = 0.02
    dropout_prob_nlos: float = 0.15
    imu_gyro_sigma: float = 0.01
    imu_speed_sigma: float = 0.05
    imu_gyro_bias: float = 0.0

    def validate(self):
        for name in ("los_sigma", "nlos_bias_sigma", "nlos_sigma",
                     "imu_gyro_sigma", "imu_speed_sigma"):
            if getattr(self, name) < 0:
                raise ScenarioError("noise %s must be >= 0" % name)
        for name in ("dropout_prob_los", "dropout_prob_nlos"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ScenarioError("noise %s must be in [0, 1]" % name)
        if self.nlos_bias_mean < 0:
            raise ScenarioError("noise nlos_bias_mean must be >= 0")


@dataclass(eq=False)
class OccupancyGrid:
    width: int
    height: int
    resolution: float
    origin: np.ndarray
    cells: np.ndarray  # (height, width) bool, row-major, True = occupied

    def world_to_cell(self, point):
        ix = int(math.floor((point[0] - self.origin[0]) / self.resolution))
        iy = int(math.floor((point[1] - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, cell):
        ix, iy = cell
        return np.array([self.origin[0] + (ix + 0.5) * self.resolution,
                         self.origin[1] + (iy + 0.5) * self.resolution])

    def in_grid(self, cell):
        ix, iy = cell
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_free(self, cell):
        if not self.in_grid(cell):
            return False
        return not self.cells[cell[1], cell[0]]

    def copy(self):
        return OccupancyGrid(self.width, self.height, self.resolution,
                             self.origin.copy(), self.cells.copy())


@dataclass(eq=False)
class LotScenario:
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    grid_resolution: float
    obstacles: list
    anchors: list
    slots: list
    entry_pose: Pose2D
    noise: NoiseProfile
    nlos_zones: list = field(default_factory=list)
    name: str = "scenario"

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=float)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float)
        self.obstacles = [np.asarray(p, dtype=float) for p in self.obstacles]
        self.nlos_zones = [np.asarray(p, dtype=float) for p in self.nlos_zones]
        self._build_caches()

    def _build_caches(self):
        # flattened obstacle edge arrays for batched sight-line tests
        starts = []
        ends = []
        for poly in self.obstacles:
            starts.append(poly)
            ends.append(np.roll(poly, -1, axis=0))
        if starts:
            self._edge_a = np.concatenate(starts)
            self._edge_b = np.concatenate(ends)
        else:
            self._edge_a = np.zeros((0, 2))
            self._edge_b = np.zeros((0, 2))
        self._obstacle_cols = [(np.ascontiguousarray(p[:, 0]),
                                np.ascontiguousarray(p[:, 1]))
                               for p in self.obstacles]
        self._slot_index = {s.id: i for i, s in enumerate(self.slots)}

    @property
    def extent(self):
        return self.bounds_max - self.bounds_min

    def contains_point(self, point):
        return bool(np.all(point >= self.bounds_min) and np.all(point <= self.bounds_max))

    def slot(self, slot_id):
        if slot_id not in self._slot_index:
            raise ScenarioError("unknown slot id: %r" % slot_id)
        return self.slots[self._slot_index[slot_id]]

    def free_slots(self):
        return [s for s in self.slots if not s.occupied]

    def __eq__(self, other):
        if not isinstance(other, LotScenario):
            return NotImplemented
        return (np.array_equal(self.bounds_min, other.bounds_min)
                and np.array_equal(self.bounds_max, other.bounds_max)
                and self.grid_resolution == other.grid_resolution
                and len(self.obstacles) == len(other.obstacles)
                and all(np.array_equal(a, b) for a, b in zip(self.obstacles, other.obstacles))
                and self.anchors == other.anchors
                and self.slots == other.slots
                and self.entry_pose == other.entry_pose
                and self.noise == other.noise
                and len(self.nlos_zones) == len(other.nlos_zones)
                and all(np.array_equal(a, b) for a, b in zip(self.nlos_zones, other.nlos_zones)))


def _check_keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise ScenarioError("%s must be an object" % where)
    unknown = set(obj) - set(required) - set(optional)
    if unknown:
        raise ScenarioError("unknown key %r in %s" % (sorted(unknown)[0], where))
    missing = set(required) - set(obj)
    if missing:
        raise ScenarioError("missing key %r in %s" % (sorted(missing)[0], where))


def _as_point(value, where):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ScenarioError("%s must be a pair of numbers" % where)
    if not all(math.isfinite(v) for v in value):
        raise ScenarioError("%s must be finite" % where)
    return np.array([float(value[0]), float(value[1])])


def _as_number(value, where):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ScenarioError("%s must be a number" % where)
    if not math.isfinite(value):
        raise ScenarioError("%s must be finite" % where)
    return float(value)


def _as_polygon(value, where):
    if not isinstance(value, (list, tuple)) or len(value) < 3:
        raise ScenarioError("%s needs at least 3 vertices" % where)
    pts = np.array([_as_point(v, where) for v in value])
    if not geom.polygon_is_simple(pts):
        raise ScenarioError("%s must be a simple polygon" % where)
    return pts


def load_scenario(document, name="scenario"):
    """Parse and validate a scenario document (JSON text, bytes, or dict)."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    if isinstance(document, str):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError("malformed scenario document: %s" % exc) from exc
    elif isinstance(document, dict):
        data = document
    else:
        raise ScenarioError("scenario document must be JSON text or a dict")

    _check_keys(data, ("bounds", "grid_resolution", "obstacles", "anchors",
                       "slots", "entry_pose", "noise"), ("nlos_zones",), "scenario")

    _check_keys(data["bounds"], ("min", "max"), (), "bounds")
    bmin = _as_point(data["bounds"]["min"], "bounds.min")
    bmax = _as_point(data["bounds"]["max"], "bounds.max")
    if not np.all(bmax > bmin):
        raise ScenarioError("bounds must have positive area")

    res = _as_number(data["grid_resolution"], "grid_resolution")
    if res <= 0:
        raise ScenarioError("grid_resolution must be positive")

    if not isinstance(data["obstacles"], list):
        raise ScenarioError("obstacles must be a list")
    obstacles = [_as_polygon(p, "obstacle %d" % i) for i, p in enumerate(data["obstacles"])]

    if not isinstance(data["anchors"], list):
        raise ScenarioError("anchors must be a list")
    anchors = []
    for i, item in enumerate(data["anchors"]):
        _check_keys(item, ("id", "pos"), (), "anchor %d" % i)
        if not isinstance(item["id"], int) or isinstance(item["id"], bool):
            raise ScenarioError("anchor id must be an integer")
        anchors.append(Anchor(item["id"], _as_point(item["pos"], "anchor %d pos" % i)))
    if len(anchors) < 3:
        raise ScenarioError("at least 3 anchors required")
    ids = [a.id for a in anchors]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate anchor id")
    for i, a in enumerate(anchors):
        for b in anchors[i + 1:]:
            if np.array_equal(a.position, b.position):
                raise ScenarioError("anchor positions must be pairwise distinct")
        if not (np.all(a.position >= bmin) and np.all(a.position <= bmax)):
            raise ScenarioError("anchor outside bounds")

    if not isinstance(data["slots"], list):
        raise ScenarioError("slots must be a list")
    slots = []
    for i, item in enumerate(data["slots"]):
        _check_keys(item, ("id", "center", "heading", "length", "width"),
                    ("occupied",), "slot %d" % i)
        if not isinstance(item["id"], str):
            raise ScenarioError("slot id must be a string")
        length = _as_number(item["length"], "slot length")
        width = _as_number(item["width"], "slot width")
        if length <= 0 or width <= 0:
            raise ScenarioError("slot length and width must be positive")
        occupied = item.get("occupied", False)
        if not isinstance(occupied, bool):
            raise ScenarioError("slot occupied must be a boolean")
        slots.append(ParkingSlot(item["id"],
                                 _as_point(item["center"], "slot %d center" % i),
                                 _as_number(item["heading"], "slot heading"),
                                 length, width, occupied))
    slot_ids = [s.id for s in slots]
    if len(set(slot_ids)) != len(slot_ids):
        raise ScenarioError("duplicate slot id")
    for s in slots:
        if not (np.all(s.center >= bmin) and np.all(s.center <= bmax)):
            raise ScenarioError("slot center outside bounds")

    _check_keys(data["entry_pose"], ("x", "y", "theta"), (), "entry_pose")
    entry = Pose2D(_as_number(data["entry_pose"]["x"], "entry_pose.x"),
                   _as_number(data["entry_pose"]["y"], "entry_pose.y"),
                   _as_number(data["entry_pose"]["theta"], "entry_pose.theta"))
    if not (bmin[0] <= entry.x <= bmax[0] and bmin[1] <= entry.y <= bmax[1]):
        raise ScenarioError("entry pose outside bounds")

    noise_fields = ("los_sigma", "nlos_bias_mean", "nlos_bias_sigma", "nlos_sigma",
                    "dropout_prob_los", "dropout_prob_nlos",
                    "imu_gyro_sigma", "imu_speed_sigma", "imu_gyro_bias")
    _check_keys(data["noise"], (), noise_fields, "noise")
    noise = NoiseProfile(**{k: _as_number(v, "noise %s" % k)
                            for k, v in data["noise"].items()})
    noise.validate()

    zones = []
    if "nlos_zones" in data:
        if not isinstance(data["nlos_zones"], list):
            raise ScenarioError("nlos_zones must be a list")
        zones = [_as_polygon(p, "nlos zone %d" % i)
                 for i, p in enumerate(data["nlos_zones"])]

    return LotScenario(bmin, bmax, res, obstacles, anchors, slots, entry,
                       noise, zones, name=name)


def load_scenario_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        content = fh.read()
    import os
    stem = os.path.splitext(os.path.basename(path))[0]
    return load_scenario(content, name=stem)


def bundled_scenario(name):
    """Load one of the scenarios shipped with the package ("lot", "open",
    "uwall", "triple")."""
    from importlib import resources
    ref = resources.files("upark") / "scenarios" / (name + ".scn")
    try:
        content = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ScenarioError("no bundled scenario named %r" % name)
    return load_scenario(content, name=name)


def emit_scenario(scenario):
    """Serialize back to document text; load_scenario(emit_scenario(s)) == s."""
    data = {
        "bounds": {"min": list(scenario.bounds_min), "max": list(scenario.bounds_max)},
        "grid_resolution": scenario.grid_resolution,
        "obstacles": [[list(v) for v in poly] for poly in scenario.obstacles],
        "anchors": [{"id": a.id, "pos": list(a.position)} for a in scenario.anchors],
        "slots": [{"id": s.id, "center": list(s.center), "heading": s.heading,
                   "length": s.length, "width": s.width, "occupied": s.occupied}
                  for s in scenario.slots],
        "entry_pose": {"x": scenario.entry_pose.x, "y": scenario.entry_pose.y,
                       "theta": scenario.entry_pose.theta},
        "noise": {k: getattr(scenario.noise, k) for k in
                  ("los_sigma", "nlos_bias_mean", "nlos_bias_sigma", "nlos_sigma",
                   "dropout_prob_los", "dropout_prob_nlos",
                   "imu_gyro_sigma", "imu_speed_sigma", "imu_gyro_bias")},
    }
    if scenario.nlos_zones:
        data["nlos_zones"] = [[list(v) for v in poly] for poly in scenario.nlos_zones]
    return json.dumps(data, indent=2, sort_keys=True)


def set_slot_occupancy(scenario, slot_id, occupied):
    """Updated scenario copy with one slot's flag changed."""
    scenario.slot(slot_id)  # raises on unknown id
    slots = [ParkingSlot(s.id, s.center.copy(), s.heading, s.length, s.width,
                         occupied if s.id == slot_id else s.occupied)
             for s in scenario.slots]
    return LotScenario(scenario.bounds_min.copy(), scenario.bounds_max.copy(),
                       scenario.grid_resolution,
                       [p.copy() for p in scenario.obstacles],
                       copy.deepcopy(scenario.anchors), slots,
                       Pose2D(scenario.entry_pose.x, scenario.entry_pose.y,
                              scenario.entry_pose.theta),
                       copy.deepcopy(scenario.noise),
                       [p.copy() for p in scenario.nlos_zones],
                       name=scenario.name)


def rasterize(scenario, inflation):
    """Occupancy grid at the scenario resolution.

    A cell is occupied iff its footprint square, grown by the inflation
    radius, overlaps some obstacle polygon with positive area (touching
    contact alone does not occupy). Slots are not obstacles.
    """
    if inflation < 0:
        raise ValueError("inflation must be >= 0")
    res = scenario.grid_resolution
    extent = scenario.extent
    width = int(math.ceil(extent[0] / res - 1e-9))
    height = int(math.ceil(extent[1] / res - 1e-9))
    cells = np.zeros((height, width), dtype=bool)
    ox, oy = scenario.bounds_min
    for px, py in scenario._obstacle_cols:
        accel.rasterize_polygon(float(ox), float(oy), float(res), width, height,
                                px, py, float(inflation), cells)
    return OccupancyGrid(width, height, res, scenario.bounds_min.copy(), cells)


def line_of_sight(scenario, a, b):
    """True iff the open segment a-b properly crosses no obstacle edge and
    neither endpoint is strictly inside an obstacle. Vertex grazing and
    edge-collinear contact count as visible."""
    for poly in scenario.obstacles:
        if geom.segment_blocked_by_polygon(a, b, poly):
            return False
    return True


def line_of_sight_batch(scenario, starts, ends):
    """Vectorized line_of_sight over K segments; returns (K,) bool."""
    blocked = geom.segments_blocked(starts, ends, scenario._edge_a,
                                    scenario._edge_b, scenario.obstacles)
    return ~blocked


def clearance_map(grid):
    """Distance (meters) from each cell center to the nearest occupied cell
    center, with the grid border treated as occupied."""
    padded = np.pad(grid.cells, 1, constant_values=True)
    dist = distance_transform_edt(~padded) * grid.resolution
    return dist[1:-1, 1:-1]


def extract_candidate_nodes(grid, scenario=None):
    """Lane-midpoint guidance nodes.

    Free cells whose clearance is a non-strict local maximum along at least
    one grid axis, greedily decimated to >= NODE_SPACING apart in clearance
    order (ties broken by row then column). Returns an (K, 2) array of cell
    centers.
    """
    clear = clearance_map(grid)
    free = ~grid.cells
    padded = np.pad(clear, 1, constant_values=-1.0)
    max_x = (padded[1:-1, 1:-1] >= padded[1:-1, :-2]) & (padded[1:-1, 1:-1] >= padded[1:-1, 2:])
    max_y = (padded[1:-1, 1:-1] >= padded[:-2, 1:-1]) & (padded[1:-1, 1:-1] >= padded[2:, 1:-1])
    candidate = free & (max_x | max_y)
    iy, ix = np.nonzero(candidate)
    if iy.size == 0:
        return np.zeros((0, 2))
    order = np.lexsort((ix, iy, -clear[iy, ix]))
    xs = grid.origin[0] + (ix[order] + 0.5) * grid.resolution
    ys = grid.origin[1] + (iy[order] + 0.5) * grid.resolution
    kept_x = []
    kept_y = []
    min_sq = NODE_SPACING * NODE_SPACING
    for x, y in zip(xs, ys):
        ok = True
        for kx, ky in zip(kept_x, kept_y):
            if (x - kx) ** 2 + (y - ky) ** 2 < min_sq:
                ok = False
                break
        if ok:
            kept_x.append(x)
            kept_y.append(y)
    return np.column_stack([kept_x, kept_y])
