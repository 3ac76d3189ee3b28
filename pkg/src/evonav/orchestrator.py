"""Episode orchestration: the recover-or-replan control loop.

One episode runs as: pull starting parameters from memory (factory defaults
on a cold start), build the first plan through the graph-distillation
pipeline, then execute and verify. Each failed verification triggers one
parameter-evolution epoch on the stuck segment while the epoch budget lasts;
once it is spent, the failure context goes back to the global replanner and
the epoch counter resets. A timeout verdict or an unplannable instruction
ends the episode; everything that happened lands in a JSON-ready report.
"""

from __future__ import annotations

import json
import time

from .clients import ClientBundle, MockScript, build_http_clients, build_mock_clients
from .evolution import EvolutionState
from .evolution import step_epoch as evolution_step_epoch
from .execution import (
    STATUS_SUCCESS,
    STATUS_TIMEOUT,
    ExecutionEngine,
    Feedback,
)
from .gcot import GcotResult, build_plan
from .graph import SceneGraph, attach_embeddings, corrupt, token_count
from .memory import ParameterMemory
from .metrics import SplSample, compute_rgtr, effective_epochs, trajectory_length
from .pathing import shortest_path_length
from .planner import DEFAULT_PARAMS, PlannerParams
from .scenario import Scenario

# Global replans per episode are bounded so an episode that burns no simulated
# time (for example, repeated failures right at a target) still terminates.
MAX_REPLANS = 8

STATUS_NOT_PLANNABLE = "not_plannable"


class OrchestratorError(RuntimeError):
    pass


def build_bundle(scenario: Scenario, backend: str = "mock",
                 http_config: dict | None = None, transport=None) -> ClientBundle:
    """Clients for an episode. The mock backend reads the scenario's script
    files; the http backend needs an explicit endpoint config."""
    if backend == "mock":
        llm = MockScript.from_file(scenario.llm_script) if scenario.llm_script else None
        advisor = (
            MockScript.from_file(scenario.advisor_script) if scenario.advisor_script else None
        )
        return build_mock_clients(llm, advisor)
    if backend == "http":
        if not http_config:
            raise OrchestratorError("http backend needs a config file")
        return build_http_clients(http_config, transport=transport)
    raise OrchestratorError(f"unknown backend {backend!r}")


def _initial_params(
    scenario: Scenario, bundle: ClientBundle, memory: ParameterMemory | None,
    warnings: list[str],
) -> tuple[PlannerParams, dict | None]:
    if memory is None and scenario.memory_store:
        memory = ParameterMemory.load(scenario.memory_store)
    if memory is not None and len(memory) > 0 and scenario.memory_query:
        params, answer = memory.retrieve_initial(
            scenario.memory_query, scenario.memory_k, bundle.embedder
        )
        return params, answer.as_dict()
    warnings.append("cold start: parameter memory is empty, using factory defaults")
    return DEFAULT_PARAMS, None


def _apply_graph_edits(
    graph: SceneGraph | None, edits: list[dict], bundle: ClientBundle,
    warnings: list[str],
) -> SceneGraph | None:
    if not edits:
        return graph
    if graph is None:
        warnings.append("graph corruption scheduled but the scenario has no graph")
        return None
    for payload in edits:
        edit = payload.get("edit", payload)
        graph = corrupt(graph, edit)
    return attach_embeddings(graph, bundle.embedder)


def _goal_xy(plan, graph, world) -> tuple[float, float] | None:
    if plan is None or not plan.steps:
        return None
    target = plan.steps[-1].target
    if target in world.objects:
        return world.objects[target]
    if graph is not None and target in graph:
        node = graph.get(target)
        if node.position is not None:
            return node.position
    return None


def _gcot_dict(result: GcotResult) -> dict:
    return {
        "plan": result.plan.as_dict() if result.plan else None,
        "iterations": [it.as_dict() for it in result.iterations],
        "tokens_sent": result.tokens_sent,
        "graph_tokens_sent": result.graph_tokens_sent,
        "graph_calls": result.graph_calls,
        "full_graph_tokens": result.full_graph_tokens,
        "warnings": list(result.warnings),
    }


def _epoch_dicts(state: EvolutionState, round_index: int) -> list[dict]:
    return [
        {
            "round": round_index,
            "epoch": rec.epoch,
            "mode": rec.mode,
            "params": rec.params.as_dict(),
            "weights": rec.weights.as_dict(),
            "loss": rec.loss,
            "outcome": rec.outcome,
        }
        for rec in state.history
    ]


def run_serp(
    scenario: Scenario,
    bundle: ClientBundle,
    memory: ParameterMemory | None = None,
    mode: str | None = None,
    max_replans: int = MAX_REPLANS,
) -> dict:
    """Run one episode end to end and return the report dict."""
    wall_start = time.time()
    warnings: list[str] = []
    mode = mode or scenario.evolution.mode
    budgets = scenario.budgets

    params, retrieval = _initial_params(scenario, bundle, memory, warnings)

    graph = scenario.graph
    if graph is not None:
        graph = attach_embeddings(graph, bundle.embedder)

    engine = ExecutionEngine(
        world=scenario.world,
        known_grid=scenario.known_grid,
        start=scenario.start,
        injections=scenario.injections,
        config=scenario.exec_config,
        timeout=budgets.timeout,
        graph=graph,
    )
    # Step-0 events land before the first plan exists.
    engine.apply_due_injections()
    graph = _apply_graph_edits(graph, engine.drain_graph_edits(), bundle, warnings)
    engine.graph = graph

    gcot_runs: list[dict] = []
    verify_attempts: list[dict] = []
    evolution_rounds: list[dict] = []
    final_status = STATUS_NOT_PLANNABLE
    total_epochs = 0
    replans = 0
    round_index = 0

    plan = None
    if graph is None:
        warnings.append("scenario has no scene graph; nothing to plan over")
    else:
        result = build_plan(
            graph, scenario.instruction, bundle.chat, bundle.embedder,
            k=scenario.gcot_k, max_iterations=scenario.gcot_max_iterations,
            log=bundle.log,
        )
        gcot_runs.append(_gcot_dict(result))
        warnings.extend(result.warnings)
        plan = result.plan

    evo_state = EvolutionState(
        params=params,
        weights=scenario.evolution.weights,
        schedule=budgets.schedule,
        budget=budgets.budget,
    )
    from_step = 0
    k_epochs = 0

    def flush_round(state: EvolutionState, index: int) -> EvolutionState:
        """Close an evolution round: record its epochs, carry the params."""
        evolution_rounds.extend(_epoch_dicts(state, index))
        warnings.extend(state.warnings)
        return EvolutionState(
            params=state.params,
            weights=state.weights,
            schedule=budgets.schedule,
            budget=budgets.budget,
        )

    while plan is not None:
        feedback: Feedback = engine.execute(plan, evo_state.params, from_step=from_step)
        verify_attempts.append(feedback.as_dict())
        graph = _apply_graph_edits(graph, engine.drain_graph_edits(), bundle, warnings)
        engine.graph = graph

        if feedback.ok:
            final_status = STATUS_SUCCESS
            break
        if feedback.status == STATUS_TIMEOUT:
            final_status = STATUS_TIMEOUT
            break

        from_step = int(feedback.context.get("failed_step", 0))
        if k_epochs <= budgets.budget - 1:
            target = engine.target_xy(plan.steps[from_step])
            stuck_plan, stuck_step = plan, from_step

            def closure(p, _plan=stuck_plan, _step=stuck_step):
                return engine.simulate_segment(_plan, _step, p)

            evo_state, _, _ = evolution_step_epoch(
                evo_state,
                closure,
                target,
                advisor=bundle.advisor,
                epsilon=scenario.evolution.epsilon,
                mode=mode,
                outcome=feedback.status,
                failure_context=feedback.context,
            )
            k_epochs += 1
            total_epochs += 1
        else:
            evo_state = flush_round(evo_state, round_index)
            round_index += 1
            replans += 1
            if replans > max_replans:
                final_status = feedback.status
                warnings.append("replanning budget exhausted")
                break
            result = build_plan(
                graph, scenario.instruction, bundle.chat, bundle.embedder,
                k=scenario.gcot_k, max_iterations=scenario.gcot_max_iterations,
                feedback=feedback.render(),
                log=bundle.log,
            )
            gcot_runs.append(_gcot_dict(result))
            warnings.extend(result.warnings)
            if result.plan is None:
                final_status = STATUS_NOT_PLANNABLE
                break
            plan = result.plan
            engine.invalidate_routes()
            from_step = 0
            k_epochs = 0
    flush_round(evo_state, round_index)

    success = final_status == STATUS_SUCCESS
    goal = _goal_xy(plan, graph, engine.world)
    path_len = trajectory_length(engine.trajectory)
    if goal is not None:
        shortest = shortest_path_length(
            engine.world, scenario.start.position(), goal
        )
    else:
        shortest = max(engine.world.resolution, 1e-6)
    spl_sample = SplSample(
        success=success, path_length=path_len, shortest_length=shortest
    )

    entries = bundle.log.entries
    tokens_sent = sum(e.prompt_tokens for e in entries)
    graph_tokens_sent = sum(
        r["graph_tokens_sent"] for r in gcot_runs
    )
    graph_calls = sum(r["graph_calls"] for r in gcot_runs)
    baseline_tokens = sum(
        r["full_graph_tokens"] * r["graph_calls"] for r in gcot_runs
    )
    # Baseline: every graph-bearing call sends the full graph of its run.
    rgtr = compute_rgtr(graph_tokens_sent, baseline_tokens, 1) if graph_calls else 0.0

    report = {
        "scenario": scenario.name,
        "instruction": scenario.instruction,
        "mode": mode,
        "budgets": {
            "schedule": sorted(budgets.schedule),
            "budget": budgets.budget,
            "timeout": budgets.timeout,
        },
        "initial_params": params.as_dict(),
        "retrieval": retrieval,
        "gcot_runs": gcot_runs,
        "verify_attempts": verify_attempts,
        "evolution": evolution_rounds,
        "final_params": evo_state.params.as_dict(),
        "final_weights": evo_state.weights.as_dict(),
        "status": final_status,
        "success": success,
        "epochs_total": total_epochs,
        "maec_epochs": effective_epochs(success, total_epochs, budgets.budget),
        "replans": replans,
        "sim_elapsed": round(engine.elapsed, 6),
        "trajectory_length": round(path_len, 6),
        "shortest_length": round(shortest, 6),
        "spl": round(100.0 * spl_sample.ratio, 6),
        "tokens_sent": tokens_sent,
        "graph_tokens_sent": graph_tokens_sent,
        "graph_calls": graph_calls,
        "graph_baseline_tokens": baseline_tokens,
        "full_graph_tokens": token_count(graph) if graph is not None else 0,
        "rgtr": rgtr,
        "min_obstacle_distance": round(engine.min_true_clearance, 6),
        "model_log": bundle.log.as_dicts(),
        "trajectory": [
            [round(s.x, 6), round(s.y, 6), round(s.theta, 6)] for s in engine.trajectory
        ],
        "warnings": warnings,
        "wall_clock_seconds": time.time() - wall_start,
    }
    return report


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
