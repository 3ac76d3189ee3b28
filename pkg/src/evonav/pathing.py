"""Global path planning on the occupancy grid.

A* over the 4-connected free-cell graph with unit edge cost. Ties in the
priority queue are broken by (row, col) lexicographic order so paths are
reproducible across runs and platforms.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .world import World, inflate_grid, cell_center, position_to_cell


class NoPathError(RuntimeError):
    """Raised when the goal cell cannot be reached ('no path')."""


NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


def astar_cells(
    grid: np.ndarray, start: tuple[int, int], goal: tuple[int, int]
) -> list[tuple[int, int]]:
    """Shortest 4-connected path over free cells of `grid` (1 = blocked)."""
    rows, cols = grid.shape
    for name, (r, c) in (("start", start), ("goal", goal)):
        if not (0 <= r < rows and 0 <= c < cols):
            raise NoPathError(f"no path: {name} cell {(r, c)} out of bounds")
        if grid[r, c] == 1:
            raise NoPathError(f"no path: {name} cell {(r, c)} is blocked")
    if start == goal:
        return [start]

    def h(cell: tuple[int, int]) -> int:
        return abs(cell[0] - goal[0]) + abs(cell[1] - goal[1])

    g_cost = {start: 0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    open_heap: list[tuple[int, int, int]] = [(h(start), start[0], start[1])]
    closed: set[tuple[int, int]] = set()
    while open_heap:
        _, r, c = heapq.heappop(open_heap)
        cell = (r, c)
        if cell in closed:
            continue
        closed.add(cell)
        if cell == goal:
            path = [cell]
            while cell != start:
                cell = parent[cell]
                path.append(cell)
            path.reverse()
            return path
        ng = g_cost[cell] + 1
        for dr, dc in NEIGHBORS_4:
            nb = (r + dr, c + dc)
            if not (0 <= nb[0] < rows and 0 <= nb[1] < cols):
                continue
            if grid[nb] == 1 or nb in closed:
                continue
            if ng < g_cost.get(nb, 1 << 60):
                g_cost[nb] = ng
                parent[nb] = cell
                heapq.heappush(open_heap, (ng + h(nb), nb[0], nb[1]))
    raise NoPathError("no path")


def nearest_free_cell(grid: np.ndarray, cell: tuple[int, int]) -> tuple[int, int]:
    """Closest free cell by BFS; deterministic (expansion in fixed order)."""
    rows, cols = grid.shape
    r0 = min(max(cell[0], 0), rows - 1)
    c0 = min(max(cell[1], 0), cols - 1)
    if grid[r0, c0] == 0:
        return (r0, c0)
    seen = {(r0, c0)}
    queue = deque([(r0, c0)])
    while queue:
        r, c = queue.popleft()
        for dr, dc in NEIGHBORS_4:
            nb = (r + dr, c + dc)
            if nb in seen or not (0 <= nb[0] < rows and 0 <= nb[1] < cols):
                continue
            if grid[nb] == 0:
                return nb
            seen.add(nb)
            queue.append(nb)
    raise NoPathError("no path: grid has no free cells")


@dataclass(frozen=True)
class GlobalPath:
    """Metric waypoint polyline produced from a cell path.

    points   -- (N, 2) waypoint positions (cell centers)
    headings -- (N,) segment headings; the last waypoint repeats the previous
    arcs     -- (N,) cumulative arc length
    """

    points: np.ndarray
    headings: np.ndarray
    arcs: np.ndarray

    @property
    def length(self) -> float:
        return float(self.arcs[-1])

    def point_at_arc(self, s: float) -> tuple[float, float, float]:
        """Interpolated (x, y, heading) at arc position s, clamped to the ends."""
        arcs = self.arcs
        if s <= 0.0:
            return (float(self.points[0, 0]), float(self.points[0, 1]), float(self.headings[0]))
        if s >= arcs[-1]:
            return (float(self.points[-1, 0]), float(self.points[-1, 1]), float(self.headings[-1]))
        i = int(np.searchsorted(arcs, s, side="right") - 1)
        seg = arcs[i + 1] - arcs[i]
        t = (s - arcs[i]) / seg if seg > 0 else 0.0
        p = self.points[i] * (1.0 - t) + self.points[i + 1] * t
        return (float(p[0]), float(p[1]), float(self.headings[i]))

    def nearest_arc(self, x: float, y: float) -> float:
        """Arc position of the closest point on the polyline to (x, y)."""
        p = np.array([x, y])
        best_s, best_d = 0.0, float("inf")
        for i in range(len(self.points) - 1):
            a, b = self.points[i], self.points[i + 1]
            ab = b - a
            denom = float(ab @ ab)
            t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0)) if denom > 0 else 0.0
            q = a + t * ab
            d = float(np.hypot(*(p - q)))
            if d < best_d:
                best_d = d
                best_s = float(self.arcs[i]) + t * math.sqrt(denom)
        if len(self.points) == 1:
            return 0.0
        return best_s


def path_from_cells(cells: list[tuple[int, int]], resolution: float) -> GlobalPath:
    pts = np.array([cell_center(c, resolution) for c in cells], dtype=float)
    n = len(cells)
    headings = np.zeros(n)
    for i in range(n - 1):
        dx, dy = pts[i + 1] - pts[i]
        headings[i] = math.atan2(dy, dx)
    if n > 1:
        headings[-1] = headings[-2]
    arcs = np.zeros(n)
    if n > 1:
        arcs[1:] = np.cumsum(np.hypot(*np.diff(pts, axis=0).T))
    return GlobalPath(points=pts, headings=headings, arcs=arcs)


def plan_global_path(
    world: World,
    start: tuple[int, int],
    goal: tuple[int, int],
    grid: np.ndarray | None = None,
    snap: bool = False,
) -> GlobalPath:
    """A* on the inflated grid, converted to metric waypoints with headings.

    `grid` overrides the world's true occupancy (callers pass the robot's
    known map when it differs). With snap=True, endpoints landing on inflated
    cells move to the nearest free cell first (a pose pressed against a wall
    still gets a route). Raises NoPathError when the goal is cut off.
    """
    base = world.grid if grid is None else grid
    inflated = inflate_grid(base, world.robot_radius, world.resolution)
    # Never let inflation swallow the endpoints themselves.
    for r, c in (start, goal):
        if world.in_bounds((r, c)) and base[r, c] == 0:
            inflated[r, c] = 0
    if snap:
        start = nearest_free_cell(inflated, start)
        goal = nearest_free_cell(inflated, goal)
    cells = astar_cells(inflated, start, goal)
    return path_from_cells(cells, world.resolution)


def shortest_path_length(
    world: World, start_xy: tuple[float, float], goal_xy: tuple[float, float]
) -> float:
    """Metric length of the shortest feasible route, with a straight-line
    fallback when the grid route is unavailable. Never returns zero."""
    res = world.resolution
    inflated = inflate_grid(world.grid, world.robot_radius, res)
    try:
        start = nearest_free_cell(inflated, position_to_cell(*start_xy, res))
        goal = nearest_free_cell(inflated, position_to_cell(*goal_xy, res))
        cells = astar_cells(inflated, start, goal)
        length = (len(cells) - 1) * res
    except NoPathError:
        length = math.hypot(goal_xy[0] - start_xy[0], goal_xy[1] - start_xy[1])
    return max(length, res)
