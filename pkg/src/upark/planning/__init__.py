"""Parking plan pipeline: occupancy grid, guided grid search, corner
smoothing, slot approach maneuver, and time parameterization.

`plan_parking` chains the stages for one vehicle and one chosen slot. If the
maneuver is geometrically infeasible from the smoothed path's end pose, the
drive path is re-planned once to an approach point set one meter farther
back from the slot mouth; a second failure propagates.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import world
from ..errors import ManeuverInfeasibleError, UnreachableGoalError
from ..world import Pose2D
from .search import SNAP_LIMIT, GridPath, astar, guided_astar, snap_to_free_cell
from .smoothing import SmoothPath, bezier_point, bezier_derivative, smooth
from .maneuver import (FORWARD, REVERSE, ArcSegment, LineSegment,
                       ParkingManeuver, parking_maneuver)
from .profile import DRIVE, PARK, ReferenceTrajectory, time_parameterize

log = logging.getLogger("upark.planning")

DEFAULT_VEHICLE_WIDTH = 0.7
DEFAULT_R_MIN = 1.0
DEFAULT_V_MAX = 1.2
DEFAULT_A_MAX = 0.8
RETRY_SETBACK_EXTRA = 1.0


@dataclass
class PlanResult:
    slot_id: str
    grid_path: GridPath
    smooth_path: SmoothPath
    maneuver: ParkingManeuver
    trajectory: ReferenceTrajectory
    expanded_guided: int
    cost_guided: float
    expanded_plain: Optional[int] = None
    cost_plain: Optional[float] = None
    replanned: bool = False


def _trivial_smooth(pose):
    # start and goal share a cell; the drive part is a standstill sample
    return SmoothPath(segments=(),
                      samples=np.array([[pose.x, pose.y]]),
                      headings=np.array([pose.theta]),
                      arclen=np.array([0.0]))


def _drive_path(grid, start_cell, goal_cell, waypoints, start_pose):
    path = guided_astar(grid, start_cell, goal_cell, waypoints)
    if len(path.cells) < 2:
        return path, _trivial_smooth(start_pose)
    return path, smooth(path, grid)


def plan_parking(scenario, slot_id, waypoints=(), start_pose=None,
                 vehicle_width=DEFAULT_VEHICLE_WIDTH, r_min=DEFAULT_R_MIN,
                 v_max=DEFAULT_V_MAX, a_max=DEFAULT_A_MAX,
                 compare_plain=False, grid=None):
    """Full parking plan from the entry pose to rest inside the slot.

    waypoints are guidance corridor points (world coordinates). With
    compare_plain=True the same instance is also solved by single-leg search
    so callers can report the explored-node reduction.
    """
    slot = scenario.slot(slot_id)
    if slot.occupied:
        raise ValueError("slot %s is occupied" % slot_id)
    if start_pose is None:
        start_pose = scenario.entry_pose
    if grid is None:
        grid = world.rasterize(scenario, world.default_inflation(vehicle_width))

    start_cell = snap_to_free_cell(grid, (start_pose.x, start_pose.y))
    if start_cell is None:
        raise UnreachableGoalError(
            "no free cell within %.1f m of the start pose" % SNAP_LIMIT)
    entry = world.slot_entry_point(slot)
    goal_cell = snap_to_free_cell(grid, entry)
    if goal_cell is None:
        raise UnreachableGoalError(
            "no free cell within %.1f m of the slot approach point" % SNAP_LIMIT)

    grid_path, smooth_path = _drive_path(grid, start_cell, goal_cell,
                                         waypoints, start_pose)
    expanded = grid_path.expanded_nodes
    cost = grid_path.cost
    replanned = False
    end = smooth_path.samples[-1]
    approach = Pose2D(float(end[0]), float(end[1]), smooth_path.end_heading())
    try:
        maneuver = parking_maneuver(approach, slot, r_min)
    except ManeuverInfeasibleError as exc:
        far_entry = world.slot_entry_point(
            slot, world.ENTRY_SETBACK + RETRY_SETBACK_EXTRA)
        far_cell = snap_to_free_cell(grid, far_entry)
        if far_cell is None:
            raise
        log.warning("maneuver infeasible (%s); re-planning to a farther "
                    "approach point", exc)
        grid_path, smooth_path = _drive_path(grid, start_cell, far_cell,
                                             waypoints, start_pose)
        expanded += grid_path.expanded_nodes
        cost = grid_path.cost
        replanned = True
        end = smooth_path.samples[-1]
        approach = Pose2D(float(end[0]), float(end[1]),
                          smooth_path.end_heading())
        maneuver = parking_maneuver(approach, slot, r_min)

    trajectory = time_parameterize(smooth_path, maneuver, v_max, a_max)
    result = PlanResult(slot_id=slot_id, grid_path=grid_path,
                        smooth_path=smooth_path, maneuver=maneuver,
                        trajectory=trajectory, expanded_guided=expanded,
                        cost_guided=cost, replanned=replanned)
    if compare_plain:
        plain = astar(grid, start_cell, goal_cell)
        result.expanded_plain = plain.expanded_nodes
        result.cost_plain = plain.cost
    return result
