"""2D world model: occupancy grid, obstacle point sets, unicycle kinematics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Distance reward saturates here; beyond this clearance obstacles are invisible
# to the local planner and the distance gradient is exactly zero.
D_CAP = 3.0


class WorldError(ValueError):
    pass


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    t = math.fmod(theta + math.pi, TWO_PI)
    if t <= 0.0:
        t += TWO_PI
    return t - math.pi


@dataclass(frozen=True)
class RobotState:
    """Pose (x, y, theta) in meters/radians. Heading is normalized on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise WorldError("invalid state")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(frozen=True)
class ControlInput:
    """Forward speed v (m/s) and yaw rate w (rad/s)."""

    v: float
    w: float

    def __post_init__(self):
        if not (math.isfinite(self.v) and math.isfinite(self.w)):
            raise WorldError("invalid control")


def step_dynamics(state: RobotState, control: ControlInput, dt: float) -> RobotState:
    """Forward-Euler unicycle step.

    x' = x + v cos(theta) dt, y' = y + v sin(theta) dt, theta' = theta + w dt,
    with the new heading wrapped to (-pi, pi].
    """
    if not math.isfinite(dt) or dt <= 0.0:
        raise WorldError("invalid state")
    nx = state.x + control.v * math.cos(state.theta) * dt
    ny = state.y + control.v * math.sin(state.theta) * dt
    nt = wrap_angle(state.theta + control.w * dt)
    return RobotState(nx, ny, nt)


def encode_rle_row(row: np.ndarray) -> str:
    """Run-length encode one 0/1 grid row, e.g. '5x0 1x1 4x0'."""
    parts = []
    run_val = int(row[0])
    run_len = 0
    for v in row:
        v = int(v)
        if v == run_val:
            run_len += 1
        else:
            parts.append(f"{run_len}x{run_val}")
            run_val, run_len = v, 1
    parts.append(f"{run_len}x{run_val}")
    return " ".join(parts)


def decode_rle_row(text: str, width: int | None = None) -> np.ndarray:
    """Decode a run-length encoded row. Validates cell values are 0/1."""
    out: list[int] = []
    for token in text.split():
        try:
            count, value = token.split("x")
            count, value = int(count), int(value)
        except ValueError as exc:
            raise WorldError(f"bad RLE token {token!r}") from exc
        if value not in (0, 1) or count < 1:
            raise WorldError(f"bad RLE token {token!r}")
        out.extend([value] * count)
    if width is not None and len(out) != width:
        raise WorldError(f"RLE row has {len(out)} cells, expected {width}")
    return np.array(out, dtype=np.int8)


def grid_to_rle(grid: np.ndarray) -> list[str]:
    return [encode_rle_row(grid[r]) for r in range(grid.shape[0])]


def grid_from_rle(rows: list[str]) -> np.ndarray:
    if not rows:
        raise WorldError("empty grid")
    first = decode_rle_row(rows[0])
    grid = np.zeros((len(rows), first.size), dtype=np.int8)
    grid[0] = first
    for r, text in enumerate(rows[1:], start=1):
        grid[r] = decode_rle_row(text, width=first.size)
    return grid


def cell_center(cell: tuple[int, int], resolution: float) -> tuple[float, float]:
    r, c = cell
    return ((c + 0.5) * resolution, (r + 0.5) * resolution)


def position_to_cell(x: float, y: float, resolution: float) -> tuple[int, int]:
    return (int(math.floor(y / resolution)), int(math.floor(x / resolution)))


def boundary_face_points(grid: np.ndarray, resolution: float, spacing: float | None = None) -> np.ndarray:
    """Sample points along faces of occupied cells that touch free space.

    Walls become physically solid for the point-based distance query; interior
    wall cells contribute nothing.
    """
    if spacing is None:
        spacing = resolution
    rows, cols = grid.shape
    pts: list[tuple[float, float]] = []
    n_side = max(1, int(round(resolution / spacing)))
    offs = [(i + 0.5) * resolution / n_side for i in range(n_side)]
    for r in range(rows):
        for c in range(cols):
            if grid[r, c] != 1:
                continue
            x0, y0 = c * resolution, r * resolution
            # face toward each free 4-neighbor
            if r + 1 < rows and grid[r + 1, c] == 0:
                pts.extend((x0 + o, y0 + resolution) for o in offs)
            if r - 1 >= 0 and grid[r - 1, c] == 0:
                pts.extend((x0 + o, y0) for o in offs)
            if c + 1 < cols and grid[r, c + 1] == 0:
                pts.extend((x0 + resolution, y0 + o) for o in offs)
            if c - 1 >= 0 and grid[r, c - 1] == 0:
                pts.extend((x0, y0 + o) for o in offs)
    if not pts:
        return np.zeros((0, 2), dtype=float)
    return np.array(pts, dtype=float)


def rect_perimeter_points(x0: float, y0: float, x1: float, y1: float, spacing: float = 0.05) -> np.ndarray:
    """Sample the perimeter of an axis-aligned rectangle at roughly `spacing`."""
    if x1 <= x0 or y1 <= y0:
        raise WorldError("invalid injection")
    pts: list[tuple[float, float]] = []
    nx = max(1, int(math.ceil((x1 - x0) / spacing)))
    ny = max(1, int(math.ceil((y1 - y0) / spacing)))
    for i in range(nx + 1):
        x = x0 + (x1 - x0) * i / nx
        pts.append((x, y0))
        pts.append((x, y1))
    for j in range(1, ny):
        y = y0 + (y1 - y0) * j / ny
        pts.append((x0, y))
        pts.append((x1, y))
    return np.array(pts, dtype=float)


@dataclass(frozen=True)
class World:
    """Immutable snapshot of the simulated environment.

    grid          -- occupancy (1 = blocked), used only by the global planner
    obstacles     -- point-sampled rigid bodies, used by the distance query
    objects       -- true positions of semantic objects, keyed by node id
    """

    grid: np.ndarray
    resolution: float
    robot_radius: float
    dt: float
    v_ref: float
    v_max: float
    w_max: float
    obstacles: tuple[np.ndarray, ...] = ()
    objects: dict[str, tuple[float, float]] = field(default_factory=dict)
    d_cap: float = D_CAP
    _points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.resolution <= 0 or self.robot_radius < 0 or self.dt <= 0:
            raise WorldError("invalid world configuration")
        if self.v_max < 0 or self.w_max < 0 or self.v_ref < 0:
            raise WorldError("invalid world configuration")
        grid = np.asarray(self.grid, dtype=np.int8)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        sets = [np.asarray(o, dtype=float).reshape(-1, 2) for o in self.obstacles]
        object.__setattr__(self, "obstacles", tuple(sets))
        if sets:
            object.__setattr__(self, "_points", np.concatenate(sets, axis=0))
        else:
            object.__setattr__(self, "_points", np.zeros((0, 2), dtype=float))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def obstacle_points(self) -> np.ndarray:
        return self._points

    def with_obstacle(self, points: np.ndarray, cells: list[tuple[int, int]]) -> "World":
        """New snapshot with one more point-sampled body and its cells occupied."""
        grid = np.array(self.grid, dtype=np.int8)
        for r, c in cells:
            if not (0 <= r < grid.shape[0] and 0 <= c < grid.shape[1]):
                raise WorldError("invalid injection")
            grid[r, c] = 1
        return World(
            grid=grid,
            resolution=self.resolution,
            robot_radius=self.robot_radius,
            dt=self.dt,
            v_ref=self.v_ref,
            v_max=self.v_max,
            w_max=self.w_max,
            obstacles=self.obstacles + (np.asarray(points, dtype=float).reshape(-1, 2),),
            objects=dict(self.objects),
            d_cap=self.d_cap,
        )

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        r, c = cell
        return 0 <= r < self.grid.shape[0] and 0 <= c < self.grid.shape[1]


def cells_covering_rect(
    x0: float, y0: float, x1: float, y1: float, resolution: float, shape: tuple[int, int]
) -> list[tuple[int, int]]:
    """Grid cells whose area overlaps the rectangle (boundary-only contact does
    not count). Cells outside the grid are dropped."""
    if x1 <= x0 or y1 <= y0:
        raise WorldError("invalid injection")
    eps = 1e-9
    r0 = int(math.floor(y0 / resolution + eps))
    r1 = int(math.ceil(y1 / resolution - eps))
    c0 = int(math.floor(x0 / resolution + eps))
    c1 = int(math.ceil(x1 / resolution - eps))
    out = []
    for r in range(max(0, r0), min(shape[0], r1)):
        for c in range(max(0, c0), min(shape[1], c1)):
            out.append((r, c))
    return out


def apply_world_injection(world: World, kind: str, payload: dict) -> World:
    """Mutate the true environment: a new rigid body appears.

    spawn_obstacle -- axis-aligned box given as rect [x0, y0, x1, y1]
    block_cells    -- explicit grid cells, each rendered as a solid box
    """
    if kind == "spawn_obstacle":
        rect = payload.get("rect")
        if not rect or len(rect) != 4:
            raise WorldError("invalid injection")
        x0, y0, x1, y1 = (float(v) for v in rect)
        spacing = float(payload.get("spacing", 0.05))
        points = rect_perimeter_points(x0, y0, x1, y1, spacing=spacing)
        cells = cells_covering_rect(x0, y0, x1, y1, world.resolution, world.grid.shape)
        return world.with_obstacle(points, cells)
    if kind == "block_cells":
        cells = [(int(r), int(c)) for r, c in payload.get("cells", [])]
        if not cells:
            raise WorldError("invalid injection")
        res = world.resolution
        chunks = []
        for r, c in cells:
            chunks.append(
                rect_perimeter_points(
                    c * res, r * res, (c + 1) * res, (r + 1) * res, spacing=res / 2.0
                )
            )
        return world.with_obstacle(np.concatenate(chunks, axis=0), cells)
    raise WorldError(f"unknown injection kind {kind!r}")


def clearance(state: RobotState, world: World) -> float:
    """Signed clearance: distance to the nearest obstacle point minus the robot
    radius, without clamping. Negative means the body overlaps an obstacle."""
    pts = world.obstacle_points()
    if pts.shape[0] == 0:
        return world.d_cap
    d = pts - np.array([state.x, state.y])
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d)))) - world.robot_radius


def nearest_obstacle_distance(state: RobotState, world: World) -> float:
    """Clearance clamped to [0, d_cap]. Returns d_cap when no points exist."""
    return min(max(clearance(state, world), 0.0), world.d_cap)


def inflate_grid(grid: np.ndarray, robot_radius: float, resolution: float) -> np.ndarray:
    """Dilate occupancy by ceil(radius/resolution) cells (square structuring
    element). Conservative guidance for the global planner; true clearance is
    enforced by the point-based distance query."""
    k = int(math.ceil(robot_radius / resolution - 1e-9)) if robot_radius > 0 else 0
    if k == 0:
        return np.array(grid, dtype=np.int8)
    rows, cols = grid.shape
    out = np.zeros_like(grid)
    occ_r, occ_c = np.nonzero(grid)
    for r, c in zip(occ_r, occ_c):
        r0, r1 = max(0, r - k), min(rows, r + k + 1)
        c0, c1 = max(0, c - k), min(cols, c + k + 1)
        out[r0:r1, c0:c1] = 1
    return out
