"""Receding-horizon local planner.

Minimizes, over a control sequence of length H+1,

    F = sum_h [ q_s * ||p_h - p_ref_h||^2 + p_v * (v_h - v_ref)^2 - eta * d_h ]

where p_h is the (x, y) part of the rolled-out state, v_h the commanded
forward speed, and d_h the clamped clearance to the nearest obstacle point.
Projected gradient descent with Armijo backtracking; the gradient through the
rollout is computed with a discrete adjoint pass (exact for the forward-Euler
unicycle), so descent never relies on finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import RobotState, ControlInput, World, wrap_angle


class PlannerError(ValueError):
    pass


class SolverDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerParams:
    """Evolvable cost weights: path tracking, speed tracking, obstacle reward."""

    q_s: float
    p_v: float
    eta: float

    def __post_init__(self):
        for name in ("q_s", "p_v", "eta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise PlannerError(f"parameter {name} must be finite and >= 0, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.q_s, self.p_v, self.eta], dtype=float)

    @classmethod
    def from_array(cls, a) -> "PlannerParams":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_dict(self) -> dict[str, float]:
        return {"q_s": self.q_s, "p_v": self.p_v, "eta": self.eta}


# Factory-fresh weights, used when parameter memory has nothing to offer.
DEFAULT_PARAMS = PlannerParams(q_s=1.0, p_v=1.0, eta=10.0)


@dataclass(frozen=True)
class ReferenceSegment:
    """H+1 reference poses (the speed plan marches at v_ref per step)."""

    waypoints: tuple[RobotState, ...]
    v_ref: float

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise PlannerError("reference needs at least two waypoints")
        if not math.isfinite(self.v_ref) or self.v_ref < 0:
            raise PlannerError("invalid reference speed")

    @property
    def horizon(self) -> int:
        return len(self.waypoints) - 1

    def xy(self) -> np.ndarray:
        return np.array([[w.x, w.y] for w in self.waypoints], dtype=float)


@dataclass(frozen=True)
class ActionPlan:
    """A solved horizon: H+1 controls and the H+1 states they roll out to."""

    controls: tuple[ControlInput, ...]
    states: tuple[RobotState, ...]

    def __post_init__(self):
        if len(self.controls) != len(self.states):
            raise PlannerError("controls and states must have equal length")

    @property
    def horizon(self) -> int:
        return len(self.controls) - 1

    def first_control(self) -> ControlInput:
        return self.controls[0]

    def controls_array(self) -> np.ndarray:
        return np.array([[c.v, c.w] for c in self.controls], dtype=float)

    def states_array(self) -> np.ndarray:
        return np.array([[s.x, s.y, s.theta] for s in self.states], dtype=float)


@dataclass(frozen=True)
class SolverOptions:
    lambda0: float = 0.1
    armijo_c: float = 1e-4
    max_iters: int = 200
    g_tol: float = 1e-4
    min_step: float = 1e-12


DEFAULT_OPTIONS = SolverOptions()


def _rollout(x0: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray:
    """States (H+1, 3) from applying U[i] at S[i]; S[0] = x0. U[-1] is the
    terminal control slot and moves nothing."""
    n = U.shape[0]
    S = np.empty((n, 3), dtype=float)
    S[0] = x0
    x, y, th = float(x0[0]), float(x0[1]), float(x0[2])
    for i in range(n - 1):
        v, w = U[i, 0], U[i, 1]
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th = wrap_angle(th + w * dt)
        S[i + 1, 0] = x
        S[i + 1, 1] = y
        S[i + 1, 2] = th
    return S


def _clearances(S: np.ndarray, points: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-state nearest-point distance minus radius (unclamped) and the index
    of the active point. Empty point set yields +inf distances."""
    n = S.shape[0]
    if points.shape[0] == 0:
        return np.full(n, np.inf), np.full(n, -1, dtype=int)
    diff = S[:, None, :2] - points[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    idx = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(n), idx]) - radius
    return dist, idx


def _cost_from_arrays(
    S: np.ndarray,
    U: np.ndarray,
    ref_xy: np.ndarray,
    v_ref: float,
    params: PlannerParams,
    points: np.ndarray,
    radius: float,
    d_cap: float,
) -> float:
    err = S[:, :2] - ref_xy
    track = float(np.sum(err * err))
    speed = float(np.sum((U[:, 0] - v_ref) ** 2))
    clear, _ = _clearances(S, points, radius)
    d = np.clip(clear, 0.0, d_cap)
    reward = float(np.sum(d))
    return params.q_s * track + params.p_v * speed - params.eta * reward


def _cost_and_grad(
    x0: np.ndarray,
    U: np.ndarray,
    ref_xy: np.ndarray,
    v_ref: float,
    params: PlannerParams,
    points: np.ndarray,
    radius: float,
    d_cap: float,
    dt: float,
) -> tuple[float, np.ndarray]:
    """Cost and its exact gradient w.r.t. U via a backward adjoint pass."""
    n = U.shape[0]
    S = _rollout(x0, U, dt)
    clear, active = _clearances(S, points, radius)
    d = np.clip(clear, 0.0, d_cap)

    err = S[:, :2] - ref_xy
    F = (
        params.q_s * float(np.sum(err * err))
        + params.p_v * float(np.sum((U[:, 0] - v_ref) ** 2))
        - params.eta * float(np.sum(d))
    )

    # dl/ds per state: tracking term plus the distance reward's subgradient
    # (zero where the clamp is active, i.e. clear <= 0 or clear >= d_cap).
    dl_ds = np.zeros((n, 3), dtype=float)
    dl_ds[:, :2] = 2.0 * params.q_s * err
    if points.shape[0] > 0:
        live = (clear > 0.0) & (clear < d_cap)
        for i in np.nonzero(live)[0]:
            p = S[i, :2] - points[active[i]]
            norm = clear[i] + radius
            if norm > 0.0:
                dl_ds[i, :2] -= params.eta * p / norm

    G = np.zeros_like(U)
    G[:, 0] = 2.0 * params.p_v * (U[:, 0] - v_ref)
    lam = dl_ds[n - 1].copy()
    for i in range(n - 2, -1, -1):
        v = U[i, 0]
        th = S[i, 2]
        c, s = math.cos(th), math.sin(th)
        # B_i^T lam: control-to-next-state sensitivity
        G[i, 0] += dt * (c * lam[0] + s * lam[1])
        G[i, 1] += dt * lam[2]
        # A_i^T lam: propagate to state i, then add its own stage gradient
        lam_prev = np.empty(3)
        lam_prev[0] = lam[0]
        lam_prev[1] = lam[1]
        lam_prev[2] = -v * s * dt * lam[0] + v * c * dt * lam[1] + lam[2]
        lam = lam_prev + dl_ds[i]
    return F, G


def cost_F(plan: ActionPlan, params: PlannerParams, ref: ReferenceSegment, world: World) -> float:
    """Horizon cost of a plan against a reference. Pure; no solver involved."""
    if plan.horizon != ref.horizon:
        raise PlannerError("plan and reference horizons differ")
    S = plan.states_array()
    U = plan.controls_array()
    return _cost_from_arrays(
        S, U, ref.xy(), ref.v_ref, params, world.obstacle_points(), world.robot_radius, world.d_cap
    )


def grad_cost_controls(
    plan: ActionPlan, params: PlannerParams, ref: ReferenceSegment, world: World
) -> np.ndarray:
    """Analytic dF/dU for the plan's control sequence, shape (H+1, 2)."""
    if plan.horizon != ref.horizon:
        raise PlannerError("plan and reference horizons differ")
    x0 = plan.states[0].as_array()
    U = plan.controls_array()
    _, G = _cost_and_grad(
        x0, U, ref.xy(), ref.v_ref, params, world.obstacle_points(),
        world.robot_radius, world.d_cap, world.dt,
    )
    return G


def _project(U: np.ndarray, v_max: float, w_max: float) -> np.ndarray:
    out = np.empty_like(U)
    np.clip(U[:, 0], -v_max, v_max, out=out[:, 0])
    np.clip(U[:, 1], -w_max, w_max, out=out[:, 1])
    return out


def init_controls_from_reference(
    state: RobotState, ref: ReferenceSegment, world: World
) -> np.ndarray:
    """Cold-start guess: drive at v_ref, turning with the reference headings."""
    n = ref.horizon + 1
    U = np.zeros((n, 2), dtype=float)
    U[:, 0] = ref.v_ref
    for i in range(n - 1):
        dth = wrap_angle(ref.waypoints[i + 1].theta - ref.waypoints[i].theta)
        U[i, 1] = dth / world.dt
    U[0, 1] += wrap_angle(ref.waypoints[0].theta - state.theta) / world.dt
    return _project(U, world.v_max, world.w_max)


def shift_warm_start(U: np.ndarray) -> np.ndarray:
    """Receding-horizon warm start: drop the applied control, repeat the tail."""
    out = np.empty_like(U)
    out[:-1] = U[1:]
    out[-1] = U[-1]
    return out


def solve_mpc(
    state: RobotState,
    ref: ReferenceSegment,
    world: World,
    params: PlannerParams,
    warm_start: np.ndarray | None = None,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> ActionPlan:
    """Projected gradient descent on the horizon cost.

    Iterates U <- clip(U - step * dF/dU) with Armijo backtracking from
    options.lambda0, stopping when the projected gradient falls below g_tol,
    the step underflows, or max_iters is reached. Accepted iterates never
    increase the cost.
    """
    x0 = state.as_array()
    ref_xy = ref.xy()
    points = world.obstacle_points()
    if warm_start is not None:
        U = _project(np.asarray(warm_start, dtype=float).copy(), world.v_max, world.w_max)
        if U.shape != (ref.horizon + 1, 2):
            raise PlannerError("warm start shape does not match the horizon")
    else:
        U = init_controls_from_reference(state, ref, world)

    def eval_cost(Ux: np.ndarray) -> float:
        S = _rollout(x0, Ux, world.dt)
        return _cost_from_arrays(
            S, Ux, ref_xy, ref.v_ref, params, points, world.robot_radius, world.d_cap
        )

    F, G = _cost_and_grad(
        x0, U, ref_xy, ref.v_ref, params, points, world.robot_radius, world.d_cap, world.dt
    )
    if not math.isfinite(F):
        raise SolverDivergedError("solver diverged")
    for _ in range(options.max_iters):
        # Projected-gradient stationarity measure (reduces to |G| in the interior).
        pg = U - _project(U - G, world.v_max, world.w_max)
        if float(np.max(np.abs(pg))) < options.g_tol:
            break
        step = options.lambda0
        accepted = False
        while step >= options.min_step:
            U_new = _project(U - step * G, world.v_max, world.w_max)
            F_new = eval_cost(U_new)
            if not math.isfinite(F_new):
                raise SolverDivergedError("solver diverged")
            if F_new <= F + options.armijo_c * float(np.sum(G * (U_new - U))):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        U = U_new
        F, G = _cost_and_grad(
            x0, U, ref_xy, ref.v_ref, params, points, world.robot_radius, world.d_cap, world.dt
        )
        if not math.isfinite(F):
            raise SolverDivergedError("solver diverged")

    S = _rollout(x0, U, world.dt)
    controls = tuple(ControlInput(float(v), float(w)) for v, w in U)
    states = tuple(RobotState(float(x), float(y), float(t)) for x, y, t in S)
    return ActionPlan(controls=controls, states=states)


def extract_reference(
    path, base_arc: float, horizon: int, v_ref: float, dt: float
) -> ReferenceSegment:
    """Reference window: H+1 poses sampled along the path at v_ref*dt arc
    spacing starting from base_arc. Windows past the path end saturate at the
    final waypoint, so the speed plan naturally stops at the goal."""
    step = v_ref * dt
    waypoints = []
    for i in range(horizon + 1):
        x, y, th = path.point_at_arc(base_arc + i * step)
        waypoints.append(RobotState(x, y, th))
    return ReferenceSegment(waypoints=tuple(waypoints), v_ref=v_ref)
