"""Self-evolution of the local planner's parameters.

A failed traversal yields a *segment closure*: params -> simulated rollout of
the stuck piece of the route. The evolution loss scores such a rollout

    L = sum_h [ alpha ||s_h - ref_h||^2 + beta (v_h - v_ref)^2 - gamma d_h ]
        + omega ||s_T - goal||_2        (terminal norm unsquared)

and two update rules move the parameters:

  gradient epoch: central finite differences through the closure (the inner
  solve is re-run per probe), clipped per-component, fixed step size;

  advisor epoch:  the failure context and history are serialized to text, an
  external advisor proposes a fresh parameter record (optionally including
  the loss weights), and malformed or out-of-range values are rejected
  key-by-key in favor of the previous ones.

The schedule decides which rule fires at each epoch; the budget caps the
total count.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .clients import AdvisorUnavailableError
from .planner import PlannerParams

GRAD_CLIP = 10.0  # per-component cap on finite-difference gradients
DEFAULT_EPSILON = 0.5

STATUS_SUCCESS = "success"
STATUS_LOCAL_FAILURE = "local_failure"


class EvolutionError(ValueError):
    pass


class NondifferentiableProbeError(RuntimeError):
    """A finite-difference probe produced a non-finite loss."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    omega: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.omega)
        for v in vals:
            if not math.isfinite(v) or v < 0.0:
                raise EvolutionError(f"loss weights must be finite and >= 0, got {vals}")
        if all(v == 0.0 for v in vals):
            raise EvolutionError("at least one loss weight must be positive")

    def as_dict(self) -> dict[str, float]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "omega": self.omega}


@dataclass(frozen=True)
class SegmentEpisode:
    """Executed rollout of a route segment under one parameter set.

    states (T+1, 3), speeds (T,) commanded v per step, dists (T+1,) clamped
    clearances, clearances (T+1,) unclamped, ref_xy (T+1, 2) the marching
    reference positions, v_ref the speed plan.
    """

    states: np.ndarray
    speeds: np.ndarray
    dists: np.ndarray
    clearances: np.ndarray
    ref_xy: np.ndarray
    v_ref: float

    def __post_init__(self):
        n = self.states.shape[0]
        if self.speeds.shape[0] != n - 1:
            raise EvolutionError("episode needs exactly one speed per step")
        if self.dists.shape[0] != n or self.ref_xy.shape[0] != n:
            raise EvolutionError("episode arrays disagree on length")


def evolution_loss(episode: SegmentEpisode, weights: LossWeights, goal_xy: tuple[float, float]) -> float:
    """Weighted episode score; lower is better. The terminal term is an
    unsquared euclidean distance from the final pose to the segment goal."""
    err = episode.states[:, :2] - episode.ref_xy
    track = float(np.sum(err * err))
    speed = float(np.sum((episode.speeds - episode.v_ref) ** 2))
    reward = float(np.sum(episode.dists))
    terminal = float(np.hypot(episode.states[-1, 0] - goal_xy[0], episode.states[-1, 1] - goal_xy[1]))
    return (
        weights.alpha * track
        + weights.beta * speed
        - weights.gamma * reward
        + weights.omega * terminal
    )


def grad_params(
    params: PlannerParams,
    weights: LossWeights,
    closure,
    goal_xy: tuple[float, float],
    rel_step: float = 1e-3,
) -> np.ndarray:
    """Central finite differences of the evolution loss over (q_s, p_v, eta).

    Each probe re-runs the closure (an inner solve per probe). Step per
    component: max(rel_step, rel_step * |x|).
    """
    base = params.as_array()
    grad = np.zeros(3, dtype=float)
    for i in range(3):
        h = max(rel_step, rel_step * abs(base[i]))
        lo = base.copy()
        hi = base.copy()
        lo[i] = max(0.0, lo[i] - h)
        hi[i] = hi[i] + h
        span = hi[i] - lo[i]
        loss_hi = evolution_loss(closure(PlannerParams.from_array(hi)), weights, goal_xy)
        loss_lo = evolution_loss(closure(PlannerParams.from_array(lo)), weights, goal_xy)
        if not (math.isfinite(loss_hi) and math.isfinite(loss_lo)):
            raise NondifferentiableProbeError("nondifferentiable probe")
        grad[i] = (loss_hi - loss_lo) / span
    return grad


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mode: str  # "AD" or "IL"
    params: PlannerParams  # the parameters evaluated at this epoch
    weights: LossWeights
    loss: float
    outcome: str  # verify status label of the evaluation


@dataclass
class EvolutionState:
    params: PlannerParams
    weights: LossWeights
    schedule: frozenset[int]
    budget: int
    epoch: int = 0
    history: list[EpochRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.budget < 1:
            raise EvolutionError("budget must be >= 1")
        bad = [k for k in self.schedule if not (1 <= k <= self.budget)]
        if bad:
            raise EvolutionError(f"schedule epochs {sorted(bad)} outside 1..{self.budget}")


@dataclass(frozen=True)
class EvolutionOutcome:
    status: str
    final_params: PlannerParams
    final_weights: LossWeights
    epochs_used: int
    loss_trace: list[float]
    history: list[EpochRecord]
    warnings: list[str]


def ad_step(
    state: EvolutionState,
    gradient: np.ndarray,
    epsilon: float,
    *,
    loss: float,
    outcome: str,
) -> EvolutionState:
    """One gradient epoch: params <- clamp(params - eps * clip(grad), >= 0)."""
    g = np.clip(np.asarray(gradient, dtype=float), -GRAD_CLIP, GRAD_CLIP)
    new = np.maximum(state.params.as_array() - epsilon * g, 0.0)
    state.history.append(
        EpochRecord(state.epoch, "AD", state.params, state.weights, loss, outcome)
    )
    state.params = PlannerParams.from_array(new)
    state.epoch += 1
    return state


_KV_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*[:=]\s*([-+0-9.eE]+)\s*$")

PARAM_KEYS = ("q_s", "p_v", "eta")
WEIGHT_KEYS = ("alpha", "beta", "gamma", "omega")


def parse_advisor_response(text: str) -> tuple[dict[str, float], list[str]]:
    """Flat key/value record -> accepted values plus per-key warnings.

    Unknown keys are ignored; negative or non-finite values are rejected with
    a warning so the previous value survives.
    """
    accepted: dict[str, float] = {}
    warnings: list[str] = []
    known = set(PARAM_KEYS) | set(WEIGHT_KEYS)
    for line in text.splitlines():
        m = _KV_LINE.match(line)
        if not m:
            continue
        key, raw = m.group(1), m.group(2)
        if key not in known:
            continue
        try:
            value = float(raw)
        except ValueError:
            warnings.append(f"advisor value for {key} unparseable: {raw!r}")
            continue
        if not math.isfinite(value) or value < 0.0:
            warnings.append(f"advisor value for {key} out of range: {value}")
            continue
        accepted[key] = value
    return accepted, warnings


def render_advisor_request(
    state: EvolutionState, loss: float, outcome: str, failure_context: dict
) -> str:
    """Structured-text advisor prompt: failure context block plus the full
    evolution history including the epoch being decided."""
    lines = ["FAILURE_CONTEXT"]
    for key in sorted(failure_context):
        lines.append(f"{key}: {failure_context[key]}")
    lines.append("HISTORY")
    records = state.history + [
        EpochRecord(state.epoch, "IL", state.params, state.weights, loss, outcome)
    ]
    for rec in records:
        p, w = rec.params, rec.weights
        lines.append(
            f"epoch={rec.epoch} mode={rec.mode} q_s={p.q_s:.6g} p_v={p.p_v:.6g} eta={p.eta:.6g} "
            f"alpha={w.alpha:.6g} beta={w.beta:.6g} gamma={w.gamma:.6g} omega={w.omega:.6g} "
            f"loss={rec.loss:.6g} outcome={rec.outcome}"
        )
    lines.append(
        "REPLY with one flat key/value record (keys among q_s p_v eta alpha beta gamma omega)."
    )
    return "\n".join(lines)


def il_step(
    state: EvolutionState,
    advisor,
    *,
    loss: float,
    outcome: str,
    failure_context: dict,
) -> EvolutionState:
    """One advisor epoch: serialize context+history, apply the returned record.

    Accepted keys overwrite the current parameters and loss weights; anything
    missing, malformed, or out of range keeps its previous value. Transport
    failure propagates as AdvisorUnavailableError.
    """
    payload = render_advisor_request(state, loss, outcome, failure_context)
    response = advisor.advise_params(payload)
    accepted, warnings = parse_advisor_response(response)
    state.warnings.extend(warnings)
    if not accepted:
        state.warnings.append("advisor response contained no usable values; keeping parameters")
    state.history.append(
        EpochRecord(state.epoch, "IL", state.params, state.weights, loss, outcome)
    )
    params = {**state.params.as_dict(), **{k: v for k, v in accepted.items() if k in PARAM_KEYS}}
    weights = {**state.weights.as_dict(), **{k: v for k, v in accepted.items() if k in WEIGHT_KEYS}}
    state.params = PlannerParams(params["q_s"], params["p_v"], params["eta"])
    state.weights = LossWeights(**weights)
    state.epoch += 1
    return state


def wants_il(state: EvolutionState, mode: str) -> bool:
    """Does the schedule fire the advisor at the current epoch?"""
    if mode == "il_only":
        return True
    if mode == "ad_only":
        return False
    return state.epoch in state.schedule


def step_epoch(
    state: EvolutionState,
    closure,
    goal_xy: tuple[float, float],
    *,
    advisor=None,
    epsilon: float = DEFAULT_EPSILON,
    mode: str = "ilad",
    loss: float | None = None,
    outcome: str = STATUS_LOCAL_FAILURE,
    failure_context: dict | None = None,
) -> tuple[EvolutionState, float, str]:
    """One evolution epoch after a failed evaluation.

    Chooses the advisor when the schedule fires (degrading to a gradient step
    if the advisor is missing or unavailable), otherwise the gradient rule.
    Returns (state, loss_used, mode_used).
    """
    if mode not in ("ilad", "ad_only", "il_only"):
        raise EvolutionError(f"unknown mode {mode!r}")
    if loss is None:
        loss = evolution_loss(closure(state.params), state.weights, goal_xy)
    context = dict(failure_context or {})
    if wants_il(state, mode):
        if advisor is None:
            state.warnings.append(
                f"no advisor configured at epoch {state.epoch}; falling back to gradient"
            )
        else:
            try:
                state = il_step(state, advisor, loss=loss, outcome=outcome, failure_context=context)
                return state, loss, "IL"
            except AdvisorUnavailableError:
                state.warnings.append(
                    f"advisor unavailable at epoch {state.epoch}; falling back to gradient"
                )
    gradient = grad_params(state.params, state.weights, closure, goal_xy)
    state = ad_step(state, gradient, epsilon, loss=loss, outcome=outcome)
    return state, loss, "AD"


def run_ilad(
    init: PlannerParams,
    weights: LossWeights,
    schedule: frozenset[int] | set[int],
    budget: int,
    closure,
    goal_xy: tuple[float, float],
    success_predicate,
    advisor=None,
    epsilon: float = DEFAULT_EPSILON,
    mode: str = "ilad",
    failure_context: dict | None = None,
) -> EvolutionOutcome:
    """Evolve parameters until the segment verifies or the budget is spent.

    Per epoch k (0-based): evaluate the closure under the current parameters;
    if the predicate accepts, stop with success and epochs_used = k. Otherwise
    apply one update: the advisor when k is in the schedule (every epoch in
    'il_only' mode, never in 'ad_only'), the gradient rule otherwise. An
    unavailable advisor degrades that epoch to a gradient step. Reaching the
    budget yields local_failure with epochs_used = budget.
    """
    if mode not in ("ilad", "ad_only", "il_only"):
        raise EvolutionError(f"unknown mode {mode!r}")
    state = EvolutionState(
        params=init, weights=weights, schedule=frozenset(schedule), budget=budget
    )
    loss_trace: list[float] = []
    for k in range(budget):
        episode = closure(state.params)
        loss = evolution_loss(episode, state.weights, goal_xy)
        loss_trace.append(loss)
        ok, label = success_predicate(episode)
        if ok:
            return EvolutionOutcome(
                status=STATUS_SUCCESS,
                final_params=state.params,
                final_weights=state.weights,
                epochs_used=k,
                loss_trace=loss_trace,
                history=list(state.history),
                warnings=list(state.warnings),
            )
        state, _, _ = step_epoch(
            state,
            closure,
            goal_xy,
            advisor=advisor,
            epsilon=epsilon,
            mode=mode,
            loss=loss,
            outcome=label,
            failure_context=failure_context,
        )
    return EvolutionOutcome(
        status=STATUS_LOCAL_FAILURE,
        final_params=state.params,
        final_weights=state.weights,
        epochs_used=budget,
        loss_trace=loss_trace,
        history=list(state.history),
        warnings=list(state.warnings),
    )
