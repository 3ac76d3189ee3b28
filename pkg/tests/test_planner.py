"""Local planner: frozen cost oracles, analytic-vs-numeric gradients, descent.

The independent cost below is assembled from world-level primitives only
(step_dynamics, nearest_obstacle_distance), so the planner's cost and its
adjoint gradient are checked against arithmetic that never touches planner
internals.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evonav.planner import (
    ActionPlan,
    DEFAULT_PARAMS,
    PlannerError,
    PlannerParams,
    ReferenceSegment,
    SolverDivergedError,
    SolverOptions,
    cost_F,
    extract_reference,
    grad_cost_controls,
    init_controls_from_reference,
    shift_warm_start,
    solve_mpc,
)
from evonav.pathing import path_from_cells
from evonav.world import ControlInput, RobotState, World, nearest_obstacle_distance, step_dynamics


def make_world(points=None, radius=0.1, dt=1.0, v_max=1.0, w_max=1.5, d_cap=3.0):
    w = World(
        grid=np.zeros((10, 10), dtype=np.int8),
        resolution=0.5,
        robot_radius=radius,
        dt=dt,
        v_ref=0.5,
        v_max=v_max,
        w_max=w_max,
        d_cap=d_cap,
    )
    if points is not None:
        w = w.with_obstacle(np.asarray(points, dtype=float), [])
    return w


def rollout_states(x0, U, dt):
    """Independent forward rollout; the terminal control slot moves nothing."""
    states = [x0]
    for i in range(len(U) - 1):
        states.append(step_dynamics(states[-1], ControlInput(float(U[i, 0]), float(U[i, 1])), dt))
    return states


def independent_cost(x0, U, ref_xy, v_ref, params, world):
    states = rollout_states(x0, U, world.dt)
    track = sum((s.x - rx) ** 2 + (s.y - ry) ** 2 for s, (rx, ry) in zip(states, ref_xy))
    speed = sum((float(v) - v_ref) ** 2 for v in np.asarray(U)[:, 0])
    reward = sum(nearest_obstacle_distance(s, world) for s in states)
    return params.q_s * track + params.p_v * speed - params.eta * reward


def plan_from_controls(x0, U, world):
    states = rollout_states(x0, U, world.dt)
    controls = tuple(ControlInput(float(v), float(w)) for v, w in U)
    return ActionPlan(controls=controls, states=tuple(states))


def ref_from_xy(xy, v_ref):
    return ReferenceSegment(
        waypoints=tuple(RobotState(x, y, 0.0) for x, y in xy), v_ref=v_ref
    )


class TestParams:
    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(PlannerError):
            PlannerParams(q_s=-0.1, p_v=1.0, eta=1.0)
        with pytest.raises(PlannerError):
            PlannerParams(q_s=1.0, p_v=float("inf"), eta=1.0)
        with pytest.raises(PlannerError):
            PlannerParams(q_s=1.0, p_v=1.0, eta=float("nan"))

    def test_round_trip(self):
        p = PlannerParams(1.5, 0.5, 12.0)
        assert PlannerParams.from_array(p.as_array()) == p
        assert p.as_dict() == {"q_s": 1.5, "p_v": 0.5, "eta": 12.0}

    def test_factory_defaults(self):
        assert DEFAULT_PARAMS == PlannerParams(q_s=1.0, p_v=1.0, eta=10.0)


class TestCostOracles:
    def setup_plan(self):
        U = np.array([[0.5, 0.0], [0.25, 0.0]])
        x0 = RobotState(0.0, 0.0, 0.0)
        ref = ref_from_xy([(0.0, 0.0), (1.0, 0.0)], v_ref=0.5)
        return x0, U, ref

    def test_tracking_only(self):
        # states (0,0) and (0.5,0); squared errors 0 and 0.25
        x0, U, ref = self.setup_plan()
        world = make_world()
        plan = plan_from_controls(x0, U, world)
        params = PlannerParams(q_s=1.0, p_v=0.0, eta=0.0)
        assert cost_F(plan, params, ref, world) == pytest.approx(0.25, abs=1e-12)

    def test_all_terms(self):
        # track 2*0.25, speed 1*(0.25-0.5)^2, reward (sqrt(0.34)-0.1) + 0.2
        x0, U, ref = self.setup_plan()
        world = make_world(points=[[0.5, 0.3]], radius=0.1)
        plan = plan_from_controls(x0, U, world)
        params = PlannerParams(q_s=2.0, p_v=1.0, eta=1.0)
        expected = 0.5 + 0.0625 - (math.sqrt(0.34) - 0.1 + 0.2)
        assert expected == pytest.approx(-0.12059518948453006, abs=1e-15)
        assert cost_F(plan, params, ref, world) == pytest.approx(expected, abs=1e-12)

    def test_horizon_mismatch_raises(self):
        x0, U, ref = self.setup_plan()
        world = make_world()
        plan = plan_from_controls(x0, np.zeros((4, 2)), world)
        with pytest.raises(PlannerError, match="horizons differ"):
            cost_F(plan, DEFAULT_PARAMS, ref, world)
        with pytest.raises(PlannerError, match="horizons differ"):
            grad_cost_controls(plan, DEFAULT_PARAMS, ref, world)

    def test_matches_independent_cost_on_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            H = int(rng.integers(1, 6))
            pts = rng.uniform(-1.0, 3.0, size=(int(rng.integers(1, 6)), 2))
            world = make_world(points=pts, dt=0.1)
            x0 = RobotState(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(-3, 3))
            U = rng.uniform(-1, 1, size=(H + 1, 2))
            ref_xy = rng.uniform(0, 2, size=(H + 1, 2))
            params = PlannerParams(*rng.uniform(0.1, 3.0, size=3))
            v_ref = float(rng.uniform(0.2, 0.8))
            plan = plan_from_controls(x0, U, world)
            ref = ref_from_xy(ref_xy, v_ref)
            assert cost_F(plan, params, ref, world) == pytest.approx(
                independent_cost(x0, U, ref_xy, v_ref, params, world), rel=1e-12, abs=1e-12
            )


def is_differentiable_instance(states, world, margin=1e-4, gap=1e-3):
    """Reject instances where the clamp or the active obstacle point sits on a
    kink: clearance within `margin` of 0 or d_cap, or two nearest points
    within `gap` of each other."""
    pts = world.obstacle_points()
    if pts.shape[0] == 0:
        return True
    for s in states:
        d = np.hypot(pts[:, 0] - s.x, pts[:, 1] - s.y)
        order = np.sort(d)
        clear = float(order[0]) - world.robot_radius
        if abs(clear) < margin or abs(clear - world.d_cap) < margin:
            return False
        if order.size > 1 and float(order[1] - order[0]) < gap:
            return False
    return True


class TestGradient:
    def fd_gradient(self, x0, U, ref_xy, v_ref, params, world, h=1e-6):
        G = np.zeros_like(U)
        for i in range(U.shape[0]):
            for j in range(2):
                up = U.copy()
                up[i, j] += h
                dn = U.copy()
                dn[i, j] -= h
                G[i, j] = (
                    independent_cost(x0, up, ref_xy, v_ref, params, world)
                    - independent_cost(x0, dn, ref_xy, v_ref, params, world)
                ) / (2 * h)
        return G

    def test_adjoint_matches_finite_differences(self):
        rng = np.random.default_rng(2024)
        checked = 0
        attempts = 0
        while checked < 20:
            attempts += 1
            assert attempts < 400, "instance filter rejected too many draws"
            H = int(rng.integers(2, 7))
            pts = rng.uniform(-1.0, 3.0, size=(int(rng.integers(2, 9)), 2))
            world = make_world(points=pts, dt=0.1)
            x0 = RobotState(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(-2.5, 2.5))
            U = rng.uniform(-1, 1, size=(H + 1, 2))
            if not is_differentiable_instance(rollout_states(x0, U, world.dt), world):
                continue
            ref_xy = rng.uniform(0, 2, size=(H + 1, 2))
            params = PlannerParams(*rng.uniform(0.1, 3.0, size=3))
            v_ref = float(rng.uniform(0.2, 0.8))
            plan = plan_from_controls(x0, U, world)
            G = grad_cost_controls(plan, params, ref_from_xy(ref_xy, v_ref), world)
            G_fd = self.fd_gradient(x0, U, ref_xy, v_ref, params, world)
            rel = np.max(np.abs(G - G_fd)) / max(1.0, float(np.max(np.abs(G))))
            assert rel < 1e-4, f"gradient mismatch {rel} on instance {checked}"
            checked += 1

    def test_clamped_distance_has_zero_subgradient(self):
        # robot parked inside the obstacle: distance clamped at zero, so only
        # the tracking and speed terms may contribute gradient
        world = make_world(points=[[0.0, 0.0]], radius=0.5, dt=0.1)
        x0 = RobotState(0.0, 0.0, 0.0)
        U = np.array([[0.1, 0.0], [0.0, 0.0]])
        ref_xy = np.array([[0.0, 0.0], [0.01, 0.0]])
        only_eta = PlannerParams(q_s=0.0, p_v=0.0, eta=5.0)
        plan = plan_from_controls(x0, U, world)
        G = grad_cost_controls(plan, only_eta, ref_from_xy(ref_xy, 0.0), world)
        np.testing.assert_allclose(G, 0.0, atol=1e-12)

    def test_terminal_control_only_sees_speed_term(self):
        world = make_world(dt=0.1)
        x0 = RobotState(0.2, 0.2, 0.5)
        U = np.array([[0.4, 0.1], [0.3, -0.2], [0.9, 0.0]])
        ref_xy = np.array([[0.2, 0.2], [0.4, 0.2], [0.6, 0.2]])
        params = PlannerParams(2.0, 3.0, 1.0)
        plan = plan_from_controls(x0, U, world)
        G = grad_cost_controls(plan, params, ref_from_xy(ref_xy, 0.5), world)
        assert G[-1, 0] == pytest.approx(2 * 3.0 * (0.9 - 0.5), abs=1e-12)
        assert G[-1, 1] == 0.0


class TestSolver:
    def straight_setup(self, y0=0.5, H=20):
        world = make_world(dt=0.1)
        x0 = RobotState(0.5, y0, 0.0)
        xy = [(0.5 + 0.05 * i, 0.5) for i in range(H + 1)]
        return world, x0, ref_from_xy(xy, v_ref=0.5)

    def test_tracks_straight_reference(self):
        world, x0, ref = self.straight_setup()
        plan = solve_mpc(x0, ref, world, PlannerParams(4.0, 1.0, 0.0))
        end = plan.states[-1]
        tx, ty = ref.waypoints[-1].x, ref.waypoints[-1].y
        assert math.hypot(end.x - tx, end.y - ty) < 0.05

    def test_recovers_from_lateral_offset(self):
        world, x0, ref = self.straight_setup(y0=0.65)
        plan = solve_mpc(x0, ref, world, PlannerParams(4.0, 1.0, 0.0))
        end = plan.states[-1]
        assert abs(end.y - 0.5) < 0.05
        assert end.x == pytest.approx(1.5, abs=0.1)

    def test_never_increases_cost_from_cold_start(self):
        world, x0, ref = self.straight_setup(y0=0.8)
        params = PlannerParams(3.0, 1.0, 0.0)
        U0 = init_controls_from_reference(x0, ref, world)
        F0 = independent_cost(x0, U0, ref.xy(), ref.v_ref, params, world)
        plan = solve_mpc(x0, ref, world, params)
        F1 = cost_F(plan, params, ref, world)
        assert F1 <= F0 + 1e-9

    def test_obstacle_reward_pushes_away(self):
        # obstacle sits right of the reference line; raising eta must not
        # decrease the achieved clearance
        world = make_world(points=[[1.2, 0.45]], radius=0.05, dt=0.1)
        x0 = RobotState(0.5, 0.5, 0.0)
        xy = [(0.5 + 0.05 * i, 0.5) for i in range(21)]
        ref = ref_from_xy(xy, v_ref=0.5)
        clearances = []
        for eta in (0.0, 2.0):
            plan = solve_mpc(x0, ref, world, PlannerParams(4.0, 1.0, eta))
            clearances.append(min(nearest_obstacle_distance(s, world) for s in plan.states))
        assert clearances[1] >= clearances[0] - 1e-9

    def test_zero_velocity_bounds_freeze_the_robot(self):
        world = make_world(dt=0.1, v_max=0.0, w_max=0.0)
        x0 = RobotState(0.5, 0.5, 0.3)
        xy = [(0.5 + 0.05 * i, 0.5) for i in range(6)]
        plan = solve_mpc(x0, ref_from_xy(xy, 0.5), world, DEFAULT_PARAMS)
        for c in plan.controls:
            assert c.v == 0.0 and c.w == 0.0
        for s in plan.states:
            assert (s.x, s.y) == (0.5, 0.5)

    def test_controls_respect_bounds(self):
        world = make_world(dt=0.1, v_max=0.7, w_max=0.9)
        x0 = RobotState(0.5, 1.5, -1.0)
        xy = [(0.5 + 0.2 * i, 0.5) for i in range(11)]
        plan = solve_mpc(x0, ref_from_xy(xy, 0.6), world, PlannerParams(5.0, 1.0, 0.0))
        U = plan.controls_array()
        assert np.all(np.abs(U[:, 0]) <= 0.7 + 1e-12)
        assert np.all(np.abs(U[:, 1]) <= 0.9 + 1e-12)

    def test_warm_start_shape_checked(self):
        world, x0, ref = self.straight_setup(H=5)
        with pytest.raises(PlannerError, match="warm start"):
            solve_mpc(x0, ref, world, DEFAULT_PARAMS, warm_start=np.zeros((3, 2)))

    def test_nan_warm_start_raises_diverged(self):
        world, x0, ref = self.straight_setup(H=5)
        bad = np.full((6, 2), np.nan)
        with pytest.raises(SolverDivergedError, match="solver diverged"):
            solve_mpc(x0, ref, world, DEFAULT_PARAMS, warm_start=bad)

    def test_deterministic(self):
        world, x0, ref = self.straight_setup(y0=0.7)
        params = PlannerParams(2.0, 1.0, 0.0)
        a = solve_mpc(x0, ref, world, params).controls_array()
        b = solve_mpc(x0, ref, world, params).controls_array()
        assert np.array_equal(a, b)

    @given(st.floats(1.0, 8.0))
    @settings(max_examples=20, deadline=None)
    def test_cost_scales_linearly_with_params(self, c):
        world = make_world(points=[[1.0, 0.8]], dt=0.1)
        x0 = RobotState(0.5, 0.5, 0.0)
        U = np.array([[0.5, 0.1], [0.3, -0.1], [0.2, 0.0]])
        ref_xy = np.array([[0.5, 0.5], [0.55, 0.5], [0.6, 0.5]])
        plan = plan_from_controls(x0, U, world)
        ref = ref_from_xy(ref_xy, 0.5)
        base = cost_F(plan, PlannerParams(1.0, 0.7, 0.4), ref, world)
        scaled = cost_F(plan, PlannerParams(c, 0.7 * c, 0.4 * c), ref, world)
        assert scaled == pytest.approx(c * base, rel=1e-9)


class TestWarmStartHelpers:
    def test_shift_repeats_tail(self):
        U = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(
            shift_warm_start(U), [[3.0, 4.0], [5.0, 6.0], [5.0, 6.0]]
        )

    def test_cold_start_tracks_reference_headings(self):
        world = make_world(dt=1.0, v_max=1.0, w_max=10.0)
        ref = ReferenceSegment(
            waypoints=(
                RobotState(0, 0, 0.0),
                RobotState(1, 0, math.pi / 2),
                RobotState(1, 1, math.pi / 2),
            ),
            v_ref=0.5,
        )
        state = RobotState(0, 0, -math.pi / 4)
        U = init_controls_from_reference(state, ref, world)
        np.testing.assert_allclose(U[:, 0], 0.5)
        assert U[0, 1] == pytest.approx(math.pi / 2 + math.pi / 4)
        assert U[1, 1] == pytest.approx(0.0)
        assert U[2, 1] == pytest.approx(0.0)

    def test_cold_start_respects_bounds(self):
        world = make_world(dt=1.0, v_max=0.3, w_max=1.5)
        ref = ReferenceSegment(
            waypoints=(RobotState(0, 0, 0.0), RobotState(1, 0, math.pi / 2)),
            v_ref=0.5,
        )
        U = init_controls_from_reference(RobotState(0, 0, math.pi), ref, world)
        assert np.all(U[:, 0] <= 0.3)
        assert np.all(np.abs(U[:, 1]) <= 1.5)


class TestExtractReference:
    def test_marches_at_v_ref_dt(self):
        path = path_from_cells([(0, 0), (0, 4)], 1.0)  # straight, length 4
        ref = extract_reference(path, base_arc=0.0, horizon=4, v_ref=0.5, dt=1.0)
        xs = [w.x for w in ref.waypoints]
        assert xs == pytest.approx([0.5, 1.0, 1.5, 2.0, 2.5])
        assert all(w.y == pytest.approx(0.5) for w in ref.waypoints)

    def test_saturates_at_path_end(self):
        path = path_from_cells([(0, 0), (0, 1)], 1.0)  # length 1
        ref = extract_reference(path, base_arc=0.8, horizon=3, v_ref=0.5, dt=1.0)
        assert ref.waypoints[0].x == pytest.approx(1.3)
        for w in ref.waypoints[1:]:
            assert (w.x, w.y) == pytest.approx((1.5, 0.5))

    def test_requires_two_waypoints(self):
        with pytest.raises(PlannerError, match="two waypoints"):
            ReferenceSegment(waypoints=(RobotState(0, 0, 0),), v_ref=0.5)
