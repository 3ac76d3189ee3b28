"""Scenario fixtures: world, budgets, injections, and script wiring from YAML.

A scenario file is self-contained apart from sibling files it points at
(scene graph, memory store, model scripts); relative paths resolve against
the scenario file's directory. Grid rows are written top line first, the way
a map reads on screen, and are flipped into row-0-at-the-bottom index order
on load so y grows with the row index.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .evolution import LossWeights
from .execution import ExecutionConfig
from .graph import SceneGraph, load_graph
from .planner import SolverOptions
from .world import (
    RobotState,
    World,
    WorldError,
    boundary_face_points,
    cells_covering_rect,
    grid_from_rle,
)

INJECTION_KINDS = ("spawn_obstacle", "block_cells", "corrupt_graph")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Injection:
    """A scripted mid-episode event: the world grows an obstacle, or the
    robot's scene graph gets corrupted. at_step counts simulation steps;
    step 0 fires before the first plan is made."""

    at_step: int
    kind: str
    payload: dict

    def __post_init__(self):
        if self.at_step < 0:
            raise ScenarioError("injection at_step must be >= 0")
        if self.kind not in INJECTION_KINDS:
            raise ScenarioError(f"unknown injection kind {self.kind!r}")


@dataclass(frozen=True)
class Budgets:
    """schedule: epochs at which the advisor fires (subset of 1..budget).
    budget: evolution epochs before escalating to global replanning.
    timeout: episode budget in simulated seconds."""

    schedule: frozenset[int]
    budget: int
    timeout: float

    def __post_init__(self):
        if self.budget < 1:
            raise ScenarioError("budget must be >= 1")
        if self.timeout <= 0:
            raise ScenarioError("timeout must be positive")
        bad = [k for k in self.schedule if not 1 <= k <= self.budget]
        if bad:
            raise ScenarioError(f"schedule entries outside 1..budget: {sorted(bad)}")


@dataclass(frozen=True)
class EvolutionConfig:
    epsilon: float = 0.5
    mode: str = "ilad"
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ScenarioError("epsilon must be positive")
        if self.mode not in ("ilad", "ad_only", "il_only"):
            raise ScenarioError(f"unknown evolution mode {self.mode!r}")


@dataclass
class Scenario:
    name: str
    instruction: str
    world: World
    known_grid: np.ndarray
    start: RobotState
    graph: SceneGraph | None
    budgets: Budgets
    evolution: EvolutionConfig
    exec_config: ExecutionConfig
    injections: list[Injection]
    memory_store: str | None = None
    memory_query: str = ""
    memory_k: int = 3
    llm_script: str | None = None
    advisor_script: str | None = None
    gcot_k: int = 3
    gcot_max_iterations: int = 3
    description: str = ""


def _take(mapping: dict, allowed: dict, where: str) -> dict:
    """Overlay mapping onto allowed defaults, rejecting unknown keys."""
    out = dict(allowed)
    for key, value in (mapping or {}).items():
        if key not in allowed:
            raise ScenarioError(f"unknown key {key!r} in {where}")
        out[key] = value
    return out


def build_world(
    grid: np.ndarray,
    resolution: float,
    robot_radius: float,
    dt: float = 0.1,
    v_ref: float = 0.5,
    v_max: float = 1.0,
    w_max: float = 1.5,
    d_cap: float = 3.0,
    wall_spacing: float | None = None,
    objects: dict[str, tuple[float, float]] | None = None,
) -> World:
    """True world from an occupancy grid: occupied cells become one solid
    point-sampled body (their free-facing faces)."""
    if wall_spacing is None:
        wall_spacing = resolution / 2.0
    walls = boundary_face_points(grid, resolution, spacing=wall_spacing)
    bodies = (walls,) if walls.shape[0] else ()
    return World(
        grid=grid,
        resolution=resolution,
        robot_radius=robot_radius,
        dt=dt,
        v_ref=v_ref,
        v_max=v_max,
        w_max=w_max,
        obstacles=bodies,
        objects=dict(objects or {}),
        d_cap=d_cap,
    )


def _resolve(base_dir: str, path: str | None) -> str | None:
    if path is None:
        return None
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario file {path} is not a mapping")
    base_dir = os.path.dirname(os.path.abspath(path))

    for key in ("name", "instruction", "grid", "robot"):
        if key not in data:
            raise ScenarioError(f"scenario missing required key {key!r}")

    grid_cfg = _take(data["grid"], {"resolution": 0.2, "rows": None}, "grid")
    if not grid_cfg["rows"]:
        raise ScenarioError("grid.rows is required")
    try:
        grid = np.flipud(grid_from_rle(list(grid_cfg["rows"]))).copy()
    except WorldError as exc:
        raise ScenarioError(f"bad grid: {exc}") from exc
    resolution = float(grid_cfg["resolution"])

    robot_cfg = _take(data["robot"], {"radius": 0.15, "start": None}, "robot")
    if not robot_cfg["start"] or len(robot_cfg["start"]) != 3:
        raise ScenarioError("robot.start must be [x, y, theta]")
    start = RobotState(*(float(v) for v in robot_cfg["start"]))

    world_cfg = _take(
        data.get("world", {}),
        {
            "dt": 0.1,
            "v_ref": 0.5,
            "v_max": 1.0,
            "w_max": 1.5,
            "d_cap": 3.0,
            "wall_spacing": None,
        },
        "world",
    )
    objects = {
        str(k): (float(v[0]), float(v[1])) for k, v in (data.get("objects") or {}).items()
    }
    world = build_world(
        grid,
        resolution,
        float(robot_cfg["radius"]),
        dt=float(world_cfg["dt"]),
        v_ref=float(world_cfg["v_ref"]),
        v_max=float(world_cfg["v_max"]),
        w_max=float(world_cfg["w_max"]),
        d_cap=float(world_cfg["d_cap"]),
        wall_spacing=world_cfg["wall_spacing"],
        objects=objects,
    )

    if data.get("known_rows"):
        known = np.flipud(grid_from_rle(list(data["known_rows"]))).copy()
        if known.shape != grid.shape:
            raise ScenarioError("known_rows shape differs from grid.rows")
    else:
        known = grid.copy()

    graph = None
    graph_path = _resolve(base_dir, data.get("graph"))
    if graph_path:
        graph = load_graph(graph_path)

    budget_cfg = _take(
        data.get("budgets", {}),
        {"schedule": [], "budget": 15, "timeout": 300.0},
        "budgets",
    )
    budgets = Budgets(
        schedule=frozenset(int(k) for k in budget_cfg["schedule"]),
        budget=int(budget_cfg["budget"]),
        timeout=float(budget_cfg["timeout"]),
    )

    evo_cfg = _take(
        data.get("evolution", {}),
        {"epsilon": 0.5, "mode": "ilad", "weights": {}},
        "evolution",
    )
    weights_cfg = _take(
        evo_cfg["weights"] or {},
        {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "omega": 1.0},
        "evolution.weights",
    )
    evolution = EvolutionConfig(
        epsilon=float(evo_cfg["epsilon"]),
        mode=str(evo_cfg["mode"]),
        weights=LossWeights(**{k: float(v) for k, v in weights_cfg.items()}),
    )

    exec_cfg = _take(
        data.get("execution", {}),
        {
            "horizon": 20,
            "arrive_tol": 0.3,
            "stall_window": 30,
            "stall_delta": 0.05,
            "r_sense": 2.0,
            "r_det": 1.0,
            "probe_steps": 150,
            "solver": {},
        },
        "execution",
    )
    solver_cfg = _take(
        exec_cfg["solver"] or {},
        {"lambda0": 0.1, "armijo_c": 1e-4, "max_iters": 200, "g_tol": 1e-4},
        "execution.solver",
    )
    exec_config = ExecutionConfig(
        horizon=int(exec_cfg["horizon"]),
        arrive_tol=float(exec_cfg["arrive_tol"]),
        stall_window=int(exec_cfg["stall_window"]),
        stall_delta=float(exec_cfg["stall_delta"]),
        r_sense=float(exec_cfg["r_sense"]),
        r_det=float(exec_cfg["r_det"]),
        probe_steps=int(exec_cfg["probe_steps"]),
        solver=SolverOptions(
            lambda0=float(solver_cfg["lambda0"]),
            armijo_c=float(solver_cfg["armijo_c"]),
            max_iters=int(solver_cfg["max_iters"]),
            g_tol=float(solver_cfg["g_tol"]),
        ),
    )

    injections = [
        Injection(
            at_step=int(item.get("at_step", 0)),
            kind=str(item.get("kind", "")),
            payload=dict(item.get("payload", {})),
        )
        for item in (data.get("injections") or [])
    ]

    memory_cfg = _take(
        data.get("memory", {}), {"store": None, "query": "", "k": 3}, "memory"
    )
    scripts_cfg = _take(
        data.get("scripts", {}), {"llm": None, "advisor": None}, "scripts"
    )
    gcot_cfg = _take(data.get("gcot", {}), {"k": 3, "max_iterations": 3}, "gcot")

    return Scenario(
        name=str(data["name"]),
        instruction=str(data["instruction"]),
        world=world,
        known_grid=known,
        start=start,
        graph=graph,
        budgets=budgets,
        evolution=evolution,
        exec_config=exec_config,
        injections=injections,
        memory_store=_resolve(base_dir, memory_cfg["store"]),
        memory_query=str(memory_cfg["query"]),
        memory_k=int(memory_cfg["k"]),
        llm_script=_resolve(base_dir, scripts_cfg["llm"]),
        advisor_script=_resolve(base_dir, scripts_cfg["advisor"]),
        gcot_k=int(gcot_cfg["k"]),
        gcot_max_iterations=int(gcot_cfg["max_iterations"]),
        description=str(data.get("description", "")),
    )


def validate_scenario(sc: Scenario) -> list[str]:
    """Consistency checks beyond what loading already enforces. Returns a
    list of human-readable issues; empty means clean."""
    issues: list[str] = []
    res = sc.world.resolution
    rows, cols = sc.world.grid.shape

    def cell_of(x: float, y: float) -> tuple[int, int]:
        return (int(np.floor(y / res)), int(np.floor(x / res)))

    r, c = cell_of(sc.start.x, sc.start.y)
    if not (0 <= r < rows and 0 <= c < cols):
        issues.append("robot start is outside the grid")
    elif sc.world.grid[r, c] == 1:
        issues.append("robot start is inside an occupied cell")

    for name, (x, y) in sc.world.objects.items():
        orr, occ = cell_of(x, y)
        if not (0 <= orr < rows and 0 <= occ < cols):
            issues.append(f"object {name} is outside the grid")

    if not sc.instruction.strip():
        issues.append("instruction is empty")

    if sc.graph is not None:
        issues.extend(sc.graph.validate())
        for node in sc.graph.nodes_at("object"):
            if node.node_id in sc.world.objects:
                gx, gy = node.position
                tx, ty = sc.world.objects[node.node_id]
                if abs(gx - tx) > 5.0 or abs(gy - ty) > 5.0:
                    issues.append(f"graph/world positions wildly disagree for {node.node_id}")

    for inj in sc.injections:
        if inj.kind == "spawn_obstacle":
            rect = inj.payload.get("rect")
            if not rect or len(rect) != 4:
                issues.append("spawn_obstacle injection lacks rect [x0, y0, x1, y1]")
            else:
                try:
                    cells = cells_covering_rect(*map(float, rect), res, (rows, cols))
                    if not cells:
                        issues.append("spawn_obstacle rect covers no grid cells")
                except WorldError:
                    issues.append(f"spawn_obstacle rect {rect} is degenerate")
        elif inj.kind == "block_cells":
            if not inj.payload.get("cells"):
                issues.append("block_cells injection lists no cells")
        elif inj.kind == "corrupt_graph":
            if sc.graph is None:
                issues.append("corrupt_graph injection without a scene graph")
            elif "edit" not in inj.payload:
                issues.append("corrupt_graph injection lacks an edit")

    for label, p in (("llm script", sc.llm_script), ("advisor script", sc.advisor_script),
                     ("memory store", sc.memory_store)):
        if p is not None and not os.path.exists(p):
            issues.append(f"{label} file does not exist: {p}")

    return issues
