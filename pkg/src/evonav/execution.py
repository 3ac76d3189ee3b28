"""Plan execution and failure verification on the simulated world.

The engine owns the split between reality and belief. The true world mutates
through scripted injections and is consulted only for kinematics, collision,
sensing, and object detection; the robot plans against the walls it knew at
start plus whatever bodies its sensor has picked up since. A route is planned
once per goto step and kept through local recovery, so parameter evolution
rather than route replanning has to absorb physical surprises.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .evolution import SegmentEpisode
from .gcot import PlanStep, TaskPlan
from .pathing import GlobalPath, NoPathError, plan_global_path
from .planner import (
    DEFAULT_OPTIONS,
    PlannerParams,
    SolverOptions,
    extract_reference,
    shift_warm_start,
    solve_mpc,
)
from .world import (
    RobotState,
    World,
    apply_world_injection,
    clearance,
    position_to_cell,
    step_dynamics,
)

STATUS_SUCCESS = "success"
STATUS_TIMEOUT = "timeout_unreached"
STATUS_STALL = "prolonged_stationary"
STATUS_NOT_DETECTED = "target_not_detected"
STATUS_COLLISION = "collision"

FAILURE_STATUSES = (
    STATUS_TIMEOUT,
    STATUS_STALL,
    STATUS_NOT_DETECTED,
    STATUS_COLLISION,
)


class ExecutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExecutionConfig:
    """Knobs of the execution/verification layer.

    stall_window / stall_delta: the robot is prolonged-stationary when its
    displacement over the last stall_window steps falls below stall_delta.
    probe_steps bounds the off-timeline rollouts used by parameter evolution.
    """

    horizon: int = 20
    arrive_tol: float = 0.3
    stall_window: int = 30
    stall_delta: float = 0.05
    r_sense: float = 2.0
    r_det: float = 1.0
    probe_steps: int = 150
    solver: SolverOptions = DEFAULT_OPTIONS

    def __post_init__(self):
        if self.horizon < 1 or self.stall_window < 1 or self.probe_steps < 1:
            raise ExecutionError("invalid execution configuration")
        if self.arrive_tol <= 0 or self.stall_delta <= 0 or self.r_det <= 0 or self.r_sense < 0:
            raise ExecutionError("invalid execution configuration")


@dataclass
class Feedback:
    """Verification verdict for one execution attempt."""

    status: str
    context: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_SUCCESS

    def as_dict(self) -> dict:
        return {"status": self.status, "context": dict(self.context)}

    def render(self) -> str:
        return f"execution status={self.status} context={json.dumps(self.context, sort_keys=True)}"


class ExecutionEngine:
    """Drives a task plan step by step and reports how it failed.

    State persists across calls: a failed execute() leaves the robot where it
    stopped, so retries resume from the failure pose, and the clock keeps
    counting simulated seconds against the episode budget.
    """

    def __init__(
        self,
        world: World,
        known_grid: np.ndarray,
        start: RobotState,
        injections=(),
        config: ExecutionConfig = ExecutionConfig(),
        timeout: float = 300.0,
        graph=None,
    ):
        known = np.array(known_grid, dtype=np.int8)
        if known.shape != world.grid.shape:
            raise ExecutionError("known grid shape does not match the world")
        self.world = world
        self.known = known
        self.graph = graph
        self.config = config
        self.timeout = float(timeout)
        self.state = start
        self.elapsed = 0.0
        self.step_count = 0
        self.trajectory: list[RobotState] = [start]
        self.min_true_clearance = clearance(start, world)
        self.graph_edits: list[dict] = []
        self._pending = sorted(injections, key=lambda i: i.at_step)
        # Bodies present at t=0 (walls, furniture) are known a priori.
        self._body_known = [True] * len(world.obstacles)
        self._planning_world: World | None = None
        self._routes: dict[int, GlobalPath] = {}

    # -- belief maintenance -------------------------------------------------

    @property
    def planning_world(self) -> World:
        """The world as the robot believes it: known bodies only."""
        if self._planning_world is None:
            bodies = tuple(
                b for b, k in zip(self.world.obstacles, self._body_known) if k
            )
            self._planning_world = World(
                grid=self.known.copy(),
                resolution=self.world.resolution,
                robot_radius=self.world.robot_radius,
                dt=self.world.dt,
                v_ref=self.world.v_ref,
                v_max=self.world.v_max,
                w_max=self.world.w_max,
                obstacles=bodies,
                objects={},
                d_cap=self.world.d_cap,
            )
        return self._planning_world

    def apply_due_injections(self) -> None:
        """Fire every injection scheduled at or before the current step.

        World mutations happen here; graph corruptions are only collected,
        because the caller owns the scene graph.
        """
        while self._pending and self._pending[0].at_step <= self.step_count:
            inj = self._pending.pop(0)
            if inj.kind == "corrupt_graph":
                self.graph_edits.append(dict(inj.payload))
            else:
                self.world = apply_world_injection(self.world, inj.kind, inj.payload)
                self._body_known.append(False)

    def drain_graph_edits(self) -> list[dict]:
        edits, self.graph_edits = self.graph_edits, []
        return edits

    def sense(self) -> None:
        """Body-level detection: any point of an unknown body within r_sense
        makes the whole body known and stamps its cells into the known map."""
        pos = np.array([self.state.x, self.state.y])
        changed = False
        for idx, body in enumerate(self.world.obstacles):
            if self._body_known[idx] or body.shape[0] == 0:
                continue
            delta = body - pos
            d2 = float(np.min(np.einsum("ij,ij->i", delta, delta)))
            if math.sqrt(d2) <= self.config.r_sense:
                self._body_known[idx] = True
                self._stamp_cells(body)
                changed = True
        if changed:
            self._planning_world = None

    def _stamp_cells(self, points: np.ndarray) -> None:
        # Points on exact cell boundaries stamp both neighbors.
        eps = 1e-9
        res = self.world.resolution
        rows, cols = self.known.shape
        for x, y in points:
            for xx in (x - eps, x + eps):
                for yy in (y - eps, y + eps):
                    r, c = position_to_cell(xx, yy, res)
                    if 0 <= r < rows and 0 <= c < cols:
                        self.known[r, c] = 1

    # -- routing ------------------------------------------------------------

    def target_xy(self, step: PlanStep) -> tuple[float, float]:
        if self.graph is not None:
            node = self.graph.get(step.target)
            if node.position is None:
                raise ExecutionError(f"plan target {step.target!r} has no position")
            return node.position
        if step.target in self.world.objects:
            return self.world.objects[step.target]
        raise ExecutionError(f"plan target {step.target!r} is unknown")

    def route_for(self, step_index: int, target_xy: tuple[float, float]) -> GlobalPath:
        """Route on the known map, planned once per goto step and cached until
        the plan itself is replaced."""
        if step_index not in self._routes:
            res = self.world.resolution
            start_cell = position_to_cell(self.state.x, self.state.y, res)
            goal_cell = position_to_cell(*target_xy, res)
            self._routes[step_index] = plan_global_path(
                self.world, start_cell, goal_cell, grid=self.known, snap=True
            )
        return self._routes[step_index]

    def invalidate_routes(self) -> None:
        self._routes.clear()

    # -- execution ----------------------------------------------------------

    def _context(self, index: int, step: PlanStep, seg_min_clear: float, **extra) -> dict:
        ctx = {
            "failed_step": index,
            "target": step.target,
            "pose": [
                round(self.state.x, 4),
                round(self.state.y, 4),
                round(self.state.theta, 4),
            ],
            "min_obstacle_distance": round(seg_min_clear, 4),
            "elapsed": round(self.elapsed, 4),
        }
        ctx.update(extra)
        return ctx

    def execute(self, plan: TaskPlan, params: PlannerParams, from_step: int = 0) -> Feedback:
        """Run the plan from the given step; stop at the first failure."""
        if not 0 <= from_step < len(plan.steps):
            raise ExecutionError("from_step outside the plan")
        for i in range(from_step, len(plan.steps)):
            step = plan.steps[i]
            target = self.target_xy(step)
            try:
                route = self.route_for(i, target)
            except NoPathError:
                # The known map offers no route at all: the robot cannot move,
                # which the verifier can only see as standing still.
                return Feedback(
                    STATUS_STALL,
                    self._context(i, step, self.min_true_clearance, note="no route on known map"),
                )
            feedback = self._run_segment(i, step, plan, route, params)
            if feedback is not None:
                return feedback
        return Feedback(
            STATUS_SUCCESS,
            {
                "pose": [
                    round(self.state.x, 4),
                    round(self.state.y, 4),
                    round(self.state.theta, 4),
                ],
                "elapsed": round(self.elapsed, 4),
            },
        )

    def _run_segment(
        self,
        index: int,
        step: PlanStep,
        plan: TaskPlan,
        route: GlobalPath,
        params: PlannerParams,
    ) -> Feedback | None:
        """Track the route until arrival or a failure verdict. Returns None on
        arrival at this goto's target."""
        cfg = self.config
        dt = self.world.dt
        v_ref = self.world.v_ref
        target = self.target_xy(step)
        is_final = index == len(plan.steps) - 1
        # The time-scheduled reference restarts at the current progress point.
        base = route.nearest_arc(self.state.x, self.state.y)
        window: deque[tuple[float, float]] = deque(maxlen=cfg.stall_window + 1)
        window.append((self.state.x, self.state.y))
        warm = None
        seg_min_clear = clearance(self.state, self.world)
        self.min_true_clearance = min(self.min_true_clearance, seg_min_clear)
        n = 0
        while True:
            if math.hypot(self.state.x - target[0], self.state.y - target[1]) <= cfg.arrive_tol:
                if is_final and step.tag:
                    true_pos = self.world.objects.get(step.target)
                    missing = true_pos is None or math.hypot(
                        true_pos[0] - target[0], true_pos[1] - target[1]
                    ) > cfg.r_det
                    if missing:
                        return Feedback(
                            STATUS_NOT_DETECTED,
                            self._context(
                                index, step, seg_min_clear, failed_node_id=step.target
                            ),
                        )
                return None
            if self.elapsed > self.timeout:
                return Feedback(STATUS_TIMEOUT, self._context(index, step, seg_min_clear))
            ref = extract_reference(route, base + n * v_ref * dt, cfg.horizon, v_ref, dt)
            local = solve_mpc(
                self.state, ref, self.planning_world, params,
                warm_start=warm, options=cfg.solver,
            )
            control = local.first_control()
            self.state = step_dynamics(self.state, control, dt)
            self.trajectory.append(self.state)
            self.elapsed += dt
            self.step_count += 1
            n += 1
            self.apply_due_injections()
            self.sense()
            clear_true = clearance(self.state, self.world)
            seg_min_clear = min(seg_min_clear, clear_true)
            self.min_true_clearance = min(self.min_true_clearance, clear_true)
            if clear_true <= 0.0:
                return Feedback(STATUS_COLLISION, self._context(index, step, seg_min_clear))
            window.append((self.state.x, self.state.y))
            if len(window) == cfg.stall_window + 1:
                x0, y0 = window[0]
                if math.hypot(self.state.x - x0, self.state.y - y0) < cfg.stall_delta:
                    return Feedback(STATUS_STALL, self._context(index, step, seg_min_clear))
            warm = shift_warm_start(local.controls_array())

    # -- evolution support ----------------------------------------------------

    def simulate_segment(
        self,
        plan: TaskPlan,
        step_index: int,
        params: PlannerParams,
        steps: int | None = None,
    ) -> SegmentEpisode:
        """Off-timeline probe of one goto segment from the current pose.

        Runs against the frozen belief world (no sensing, no injections, no
        clock) so evolution can evaluate candidate parameters without touching
        the episode timeline.
        """
        cfg = self.config
        total = cfg.probe_steps if steps is None else steps
        pw = self.planning_world
        step = plan.steps[step_index]
        target = self.target_xy(step)
        route = self.route_for(step_index, target)
        dt = self.world.dt
        v_ref = self.world.v_ref
        state = self.state
        base = route.nearest_arc(state.x, state.y)
        states = [state.as_array()]
        speeds: list[float] = []
        clears = [clearance(state, pw)]
        px, py, _ = route.point_at_arc(base)
        refs = [(px, py)]
        warm = None
        for n in range(total):
            ref = extract_reference(route, base + n * v_ref * dt, cfg.horizon, v_ref, dt)
            local = solve_mpc(state, ref, pw, params, warm_start=warm, options=cfg.solver)
            control = local.first_control()
            state = step_dynamics(state, control, dt)
            states.append(state.as_array())
            speeds.append(control.v)
            clears.append(clearance(state, pw))
            px, py, _ = route.point_at_arc(base + (n + 1) * v_ref * dt)
            refs.append((px, py))
            warm = shift_warm_start(local.controls_array())
        clear_arr = np.array(clears, dtype=float)
        return SegmentEpisode(
            states=np.array(states, dtype=float),
            speeds=np.array(speeds, dtype=float),
            dists=np.clip(clear_arr, 0.0, self.world.d_cap),
            clearances=clear_arr,
            ref_xy=np.array(refs, dtype=float),
            v_ref=v_ref,
        )


def segment_success(target_xy: tuple[float, float], config: ExecutionConfig):
    """Predicate over probe episodes: reached the target without contact.

    The failure label mirrors the verification taxonomy so evolution history
    reads the same way as real execution feedback.
    """
    tx, ty = target_xy

    def predicate(episode: SegmentEpisode) -> tuple[bool, str]:
        pos = episode.states[:, :2]
        d = np.hypot(pos[:, 0] - tx, pos[:, 1] - ty)
        reached = np.nonzero(d <= config.arrive_tol)[0]
        if reached.size:
            t = int(reached[0])
            if bool(np.all(episode.clearances[: t + 1] > 0.0)):
                return True, STATUS_SUCCESS
            return False, STATUS_COLLISION
        if bool(np.any(episode.clearances <= 0.0)):
            return False, STATUS_COLLISION
        w = min(config.stall_window, pos.shape[0] - 1)
        if w > 0 and float(np.hypot(*(pos[-1] - pos[-1 - w]))) < config.stall_delta:
            return False, STATUS_STALL
        return False, STATUS_TIMEOUT

    return predicate
