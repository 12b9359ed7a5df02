"""Grid path search: plain A* and its waypoint-guided variant.

8-connected moves with sqrt(2)-weighted diagonals; a diagonal is allowed
only when both orthogonal neighbors are free (no corner cutting). The
heuristic is octile distance, admissible and consistent for these costs, so
plain A* is cost-optimal. Guidance decomposes the search into legs through
the waypoints; each leg is itself optimal, the concatenation need not be.
"""

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import UnreachableGoalError

log = logging.getLogger("upark.planning")

SQRT2 = math.sqrt(2.0)
# waypoints farther than this from any free cell are dropped
SNAP_LIMIT = 1.0

# (dx, dy, unit cost)
_MOVES = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
          (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))


@dataclass
class GridPath:
    cells: list      # [(ix, iy), ...] start through goal
    cost: float      # meters
    expanded_nodes: int


def _octile(a, b):
    dx = abs(a[0] - b[0])
    dy = abs(a[1] - b[1])
    return (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))


def astar(grid, start, goal):
    """Optimal 8-connected path between free cells.

    expanded_nodes counts closed-set insertions. Raises UnreachableGoalError
    when no path exists or an endpoint is occupied.
    """
    start = tuple(start)
    goal = tuple(goal)
    if not grid.is_free(start):
        raise UnreachableGoalError("start cell %r is not free" % (start,))
    if not grid.is_free(goal):
        raise UnreachableGoalError("goal cell %r is not free" % (goal,))
    res = grid.resolution
    g_score = {start: 0.0}
    came = {}
    closed = set()
    expanded = 0
    counter = 0
    heap = [(_octile(start, goal) * res, 0, start)]
    while heap:
        f, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        closed.add(cell)
        expanded += 1
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(came[path[-1]])
            path.reverse()
            return GridPath(path, g_score[goal] * res, expanded)
        cx, cy = cell
        base = g_score[cell]
        for dx, dy, step in _MOVES:
            nxt = (cx + dx, cy + dy)
            if nxt in closed or not grid.is_free(nxt):
                continue
            if dx != 0 and dy != 0:
                # no corner cutting past an occupied orthogonal neighbor
                if not grid.is_free((cx + dx, cy)) or not grid.is_free((cx, cy + dy)):
                    continue
            tentative = base + step
            if tentative < g_score.get(nxt, math.inf):
                g_score[nxt] = tentative
                came[nxt] = cell
                counter += 1
                heapq.heappush(heap, ((tentative + _octile(nxt, goal)) * res,
                                      counter, nxt))
    raise UnreachableGoalError("no path from %r to %r" % (start, goal))


def snap_to_free_cell(grid, point):
    """Nearest free cell whose center is within SNAP_LIMIT of the point, or
    None. Ties break on (row, column)."""
    point = np.asarray(point, dtype=float)
    ix0, iy0 = grid.world_to_cell(point)
    reach = int(math.ceil(SNAP_LIMIT / grid.resolution)) + 1
    best = None
    best_key = None
    for iy in range(iy0 - reach, iy0 + reach + 1):
        for ix in range(ix0 - reach, ix0 + reach + 1):
            if not grid.is_free((ix, iy)):
                continue
            center = grid.cell_center((ix, iy))
            d = float(np.linalg.norm(center - point))
            if d > SNAP_LIMIT:
                continue
            key = (d, iy, ix)
            if best_key is None or key < best_key:
                best_key = key
                best = (ix, iy)
    return best


def guided_astar(grid, start, goal, waypoints=()):
    """A* decomposed into legs through waypoints (world points).

    Waypoints snap to the nearest free cell within SNAP_LIMIT (farther ones
    are dropped with a warning). A leg that cannot be reached drops its
    waypoint and re-plans to the next target; only an unreachable goal is
    fatal. Duplicate junction cells are merged; cost and expanded_nodes sum
    over the legs.
    """
    start = tuple(start)
    goal = tuple(goal)
    targets = []
    for wp in waypoints:
        cell = snap_to_free_cell(grid, wp)
        if cell is None:
            log.warning("waypoint (%.2f, %.2f) has no free cell within %.1f m; dropped",
                        wp[0], wp[1], SNAP_LIMIT)
            continue
        if cell != start and cell != goal and (not targets or targets[-1] != cell):
            targets.append(cell)
    targets.append(goal)

    cells = [start]
    cost = 0.0
    expanded = 0
    current = start
    for i, target in enumerate(targets):
        final = i == len(targets) - 1
        try:
            leg = astar(grid, current, target)
        except UnreachableGoalError:
            if final:
                raise
            continue  # drop this waypoint, re-plan to the next target
        expanded += leg.expanded_nodes
        cost += leg.cost
        cells.extend(leg.cells[1:])
        current = target
    return GridPath(cells, cost, expanded)
