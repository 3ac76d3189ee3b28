"""Self-evolving navigation for a simulated 2D robot.

Two recovery levels around one execution loop: parameter evolution repairs
physical failures by re-tuning the local planner's cost weights, and
scene-graph distillation repairs semantic failures by rebuilding the task
plan from a compact slice of the environment model.
"""

from .world import (
    D_CAP,
    ControlInput,
    RobotState,
    World,
    WorldError,
    clearance,
    nearest_obstacle_distance,
    step_dynamics,
    wrap_angle,
)
from .pathing import GlobalPath, NoPathError, plan_global_path, shortest_path_length
from .planner import (
    DEFAULT_PARAMS,
    ActionPlan,
    PlannerParams,
    ReferenceSegment,
    SolverOptions,
    cost_F,
    extract_reference,
    grad_cost_controls,
    solve_mpc,
)
from .evolution import (
    EvolutionOutcome,
    LossWeights,
    SegmentEpisode,
    ad_step,
    evolution_loss,
    grad_params,
    il_step,
    run_ilad,
)
from .memory import ColdStartError, ParameterMemory, RetrievalAnswer
from .graph import DistilledGraph, SceneGraph, SceneNode, count_text_tokens, token_count
from .gcot import GcotResult, PlanStep, TaskPlan, build_plan
from .clients import (
    AdvisorUnavailableError,
    ClientBundle,
    HashedBagEmbedder,
    MockScript,
    NetworkDisabledError,
    build_mock_clients,
)
from .scenario import Scenario, load_scenario, validate_scenario
from .execution import ExecutionConfig, ExecutionEngine, Feedback
from .orchestrator import run_serp, write_report
from .metrics import SplSample, compute_maec, compute_rgtr, compute_spl

__all__ = [
    "D_CAP",
    "ControlInput",
    "RobotState",
    "World",
    "WorldError",
    "clearance",
    "nearest_obstacle_distance",
    "step_dynamics",
    "wrap_angle",
    "GlobalPath",
    "NoPathError",
    "plan_global_path",
    "shortest_path_length",
    "DEFAULT_PARAMS",
    "ActionPlan",
    "PlannerParams",
    "ReferenceSegment",
    "SolverOptions",
    "cost_F",
    "extract_reference",
    "grad_cost_controls",
    "solve_mpc",
    "EvolutionOutcome",
    "LossWeights",
    "SegmentEpisode",
    "ad_step",
    "evolution_loss",
    "grad_params",
    "il_step",
    "run_ilad",
    "ColdStartError",
    "ParameterMemory",
    "RetrievalAnswer",
    "DistilledGraph",
    "SceneGraph",
    "SceneNode",
    "count_text_tokens",
    "token_count",
    "GcotResult",
    "PlanStep",
    "TaskPlan",
    "build_plan",
    "AdvisorUnavailableError",
    "ClientBundle",
    "HashedBagEmbedder",
    "MockScript",
    "NetworkDisabledError",
    "build_mock_clients",
    "Scenario",
    "load_scenario",
    "validate_scenario",
    "ExecutionConfig",
    "ExecutionEngine",
    "Feedback",
    "run_serp",
    "write_report",
    "SplSample",
    "compute_maec",
    "compute_rgtr",
    "compute_spl",
    "__version__",
]

__version__ = "0.1.0"
