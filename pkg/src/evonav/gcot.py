"""Global replanning: distill the scene graph into a small task graph, then
synthesize an executable route over it.

Pipeline per attempt: decompose the instruction into subtasks, retrieve
candidate elements by embedding similarity, ask the model to select the
relevant ones (selection is validated against the full graph; unknown ids are
dropped), close the selection over ancestors to form the distilled graph, and
synthesize one goto() route per subtask against that distilled graph only.

Failed attempts double the retrieval breadth and carry their failure reason
forward as context. Every prompt's token count lands in the shared model log;
the graph-bearing sections (CANDIDATES, GRAPH) are accounted separately so
reduction ratios can be recomputed from the raw log alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .clients import ModelRequest
from .graph import (
    DistilledGraph,
    SceneGraph,
    SceneNode,
    count_text_tokens,
    form_element_graph,
    token_count,
)


class GcotError(ValueError):
    pass


NOT_PLANNABLE = "NOT_PLANNABLE"

DEFAULT_TOP_K = 3
DEFAULT_MAX_ITERATIONS = 3

_STEP_RE = re.compile(r"^goto\(([A-Za-z0-9_]+)(?:\[([^\[\]()]+)\])?\)$")
_NUMBERED_RE = re.compile(r"^\s*\d+[.)]\s*(.+?)\s*$")
_ID_RE = re.compile(r"^[A-Za-z0-9_]+$")

DECOMPOSE_TEMPLATE = (
    "You break a navigation instruction into ordered subtasks.\n"
    "INSTRUCTION\n{instruction}\n"
    "CONTEXT\n{context}\n"
    "REPLY with a numbered list, one subtask per line, nothing else."
)

DISTILL_TEMPLATE = (
    "You pick the scene elements a robot needs for its subtasks.\n"
    "SUBTASKS\n{subtasks}\n"
    "CANDIDATES\n{candidates}\n"
    "CONTEXT\n{context}\n"
    "REPLY with one element id per line, nothing else."
)

SYNTHESIZE_TEMPLATE = (
    "You write an executable route for one subtask using only the graph below.\n"
    "SUBTASK\n{subtask}\n"
    "GRAPH\n{graph}\n"
    "CONTEXT\n{context}\n"
    "REPLY with one goto(<id>) or goto(<id>[<tag>]) line per waypoint, in "
    "order, or the single word " + NOT_PLANNABLE + "."
)


@dataclass(frozen=True)
class PlanStep:
    """One waypoint: navigate to the node with this id. A non-empty tag marks
    an object target whose physical presence the verifier must confirm."""

    target: str
    tag: str = ""

    def render(self) -> str:
        if self.tag:
            return f"goto({self.target}[{self.tag}])"
        return f"goto({self.target})"


@dataclass(frozen=True)
class TaskPlan:
    steps: tuple[PlanStep, ...]
    subtasks: tuple[str, ...]

    def __post_init__(self):
        if not self.steps:
            raise GcotError("a plan needs at least one step")

    def render(self) -> str:
        return "\n".join(s.render() for s in self.steps)

    def as_dict(self) -> dict:
        return {
            "steps": [{"target": s.target, "tag": s.tag} for s in self.steps],
            "subtasks": list(self.subtasks),
        }


@dataclass
class GcotIteration:
    """Record of one distill+synthesize attempt, kept for the episode report."""

    index: int
    k: int
    subtasks: list[str]
    selected_ids: list[str]
    dropped_ids: list[str]
    plan_lines: list[str]
    status: str  # "ok" | "not_plannable"
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "k": self.k,
            "subtasks": list(self.subtasks),
            "selected_ids": list(self.selected_ids),
            "dropped_ids": list(self.dropped_ids),
            "plan_lines": list(self.plan_lines),
            "status": self.status,
            "reason": self.reason,
        }


@dataclass
class GcotResult:
    plan: TaskPlan | None
    distilled: DistilledGraph | None
    iterations: list[GcotIteration]
    tokens_sent: int
    graph_tokens_sent: int
    graph_calls: int
    full_graph_tokens: int
    warnings: list[str] = field(default_factory=list)


def extract_graph_section(kind: str, payload: str) -> str | None:
    """Pull the graph-content section back out of a logged prompt.

    Distill prompts carry it under the CANDIDATES header, synthesis prompts
    under GRAPH; the section runs until the final CONTEXT header. Returns
    None for kinds that carry no graph content.
    """
    marker = {"distill_select": "CANDIDATES", "synthesize": "GRAPH"}.get(kind)
    if marker is None:
        return None
    lines = payload.splitlines()
    try:
        i = lines.index(marker)
        j = len(lines) - 1 - lines[::-1].index("CONTEXT")
    except ValueError:
        return None
    if j <= i:
        return None
    return "\n".join(lines[i + 1 : j])


def parse_plan_line(line: str) -> PlanStep:
    m = _STEP_RE.match(line.strip())
    if not m:
        raise GcotError(f"unparseable plan line: {line!r}")
    return PlanStep(target=m.group(1), tag=m.group(2) or "")


def _context_block(parts: list[str]) -> str:
    text = "\n".join(p for p in parts if p)
    return text if text else "none"


def decompose(instruction: str, chat, context_parts: list[str] | None = None) -> list[str]:
    """Split an instruction into ordered subtasks via the chat model.

    Accepts numbered lines ("1. ..." or "1) ..."); a response with no numbered
    lines falls back to the whole instruction as a single subtask.
    """
    prompt = DECOMPOSE_TEMPLATE.format(
        instruction=instruction.strip(),
        context=_context_block(list(context_parts or [])),
    )
    response = chat.chat(ModelRequest(kind="decompose", payload=prompt))
    subtasks = []
    for line in response.splitlines():
        m = _NUMBERED_RE.match(line)
        if m:
            subtasks.append(m.group(1))
    if not subtasks:
        subtasks = [instruction.strip()]
    return subtasks


def _node_vec(node: SceneNode, embedder) -> np.ndarray:
    if node.embedding is not None:
        return np.asarray(node.embedding, dtype=float)
    return embedder.embed(node.text or node.tag or node.node_id)


def retrieve_elements(graph: SceneGraph, query: str, k: int, embedder) -> list[SceneNode]:
    """Top-k room and object nodes by cosine similarity to the query, ties
    broken by node id."""
    if k < 1:
        raise GcotError("retrieval needs k >= 1")
    qv = embedder.embed(query)
    scored = []
    for node in graph.nodes_at("room") + graph.nodes_at("object"):
        score = float(np.dot(qv, _node_vec(node, embedder)))
        scored.append((-score, node.node_id, node))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [node for _, _, node in scored[:k]]


def _candidates_block(candidates: list[SceneNode]) -> str:
    if not candidates:
        return "{}"
    lines = [n.serialize_line() for n in sorted(candidates, key=lambda n: n.node_id)]
    return "{\n" + "\n".join(lines) + "\n}"


def _subtasks_block(subtasks: list[str]) -> str:
    return "\n".join(f"{i + 1}. {s}" for i, s in enumerate(subtasks))


def distill(
    graph: SceneGraph,
    subtasks: list[str],
    candidates: list[SceneNode],
    chat,
    context_parts: list[str] | None = None,
    iteration: int = 0,
) -> tuple[DistilledGraph, list[str], list[str]]:
    """Model-driven element selection, then ancestor closure.

    Returns (distilled graph, selected ids, dropped ids). Selected ids are
    validated against the full graph; unknown ids are dropped, not fatal.
    """
    block = _candidates_block(candidates)
    prompt = DISTILL_TEMPLATE.format(
        subtasks=_subtasks_block(subtasks),
        candidates=block,
        context=_context_block(list(context_parts or [])),
    )
    request = ModelRequest(
        kind="distill_select", payload=prompt, graph_tokens=count_text_tokens(block)
    )
    response = chat.chat(request)
    selected: list[str] = []
    dropped: list[str] = []
    for line in response.splitlines():
        for piece in re.split(r"[\s,]+", line.strip()):
            if not piece or not _ID_RE.match(piece):
                continue
            if piece in graph:
                if piece not in selected:
                    selected.append(piece)
            else:
                dropped.append(piece)
    distilled = form_element_graph(graph, selected, iteration=iteration)
    return distilled, selected, dropped


def synthesize(
    subtask: str,
    distilled: DistilledGraph,
    chat,
    context_parts: list[str] | None = None,
) -> tuple[list[PlanStep] | None, str, list[str]]:
    """One route for one subtask, using only the distilled graph.

    Returns (steps, reason, raw lines). steps is None when the model declares
    the subtask not plannable, emits an unparseable line, or names a node
    outside the distilled graph.
    """
    block = distilled.serialize()
    prompt = SYNTHESIZE_TEMPLATE.format(
        subtask=subtask,
        graph=block,
        context=_context_block(list(context_parts or [])),
    )
    request = ModelRequest(
        kind="synthesize", payload=prompt, graph_tokens=count_text_tokens(block)
    )
    response = chat.chat(request)
    lines = [ln.strip() for ln in response.splitlines() if ln.strip()]
    if any(ln == NOT_PLANNABLE for ln in lines):
        return None, "declared not plannable", lines
    steps: list[PlanStep] = []
    for ln in lines:
        try:
            step = parse_plan_line(ln)
        except GcotError:
            return None, f"unparseable line: {ln!r}", lines
        if step.target not in distilled:
            return None, f"target outside distilled graph: {step.target!r}", lines
        steps.append(step)
    if not steps:
        return None, "empty plan", lines
    return steps, "", lines


def build_plan(
    graph: SceneGraph,
    instruction: str,
    chat,
    embedder,
    *,
    k: int = DEFAULT_TOP_K,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    feedback: str = "",
    log=None,
) -> GcotResult:
    """Full replanning pipeline: decompose once, then iterate
    retrieve/distill/synthesize with doubling k until a plan forms.

    feedback is failure context from execution (failed step, pose, cause) and
    seeds the context every prompt sees. Token totals are read back from the
    shared model log; pass the log explicitly if chat does not expose `.log`.
    """
    if max_iterations < 1:
        raise GcotError("need at least one iteration")
    model_log = log if log is not None else getattr(chat, "log", None)
    if model_log is None:
        raise GcotError("build_plan needs access to the model log for accounting")
    start = len(model_log.entries)

    warnings: list[str] = []
    context_parts: list[str] = []
    if feedback:
        context_parts.append(feedback)

    subtasks = decompose(instruction, chat, context_parts)
    iterations: list[GcotIteration] = []
    plan: TaskPlan | None = None
    distilled: DistilledGraph | None = None

    k_now = k
    for index in range(max_iterations):
        candidates = retrieve_elements(graph, instruction, k_now, embedder)
        distilled, selected, dropped = distill(
            graph, subtasks, candidates, chat, context_parts, iteration=index
        )
        if dropped:
            warnings.append(
                "selection named unknown elements: " + ", ".join(sorted(set(dropped)))
            )
        record = GcotIteration(
            index=index,
            k=k_now,
            subtasks=list(subtasks),
            selected_ids=list(selected),
            dropped_ids=list(dropped),
            plan_lines=[],
            status="ok",
        )
        if not selected:
            record.status = "not_plannable"
            record.reason = "no known elements selected"
        else:
            steps: list[PlanStep] = []
            for subtask in subtasks:
                got, reason, lines = synthesize(subtask, distilled, chat, context_parts)
                record.plan_lines.extend(lines)
                if got is None:
                    record.status = "not_plannable"
                    record.reason = f"subtask {subtask!r}: {reason}"
                    break
                steps.extend(got)
            if record.status == "ok":
                plan = TaskPlan(steps=tuple(steps), subtasks=tuple(subtasks))
        iterations.append(record)
        if plan is not None:
            break
        context_parts.append(f"attempt {index + 1} failed: {record.reason}")
        k_now *= 2

    made = model_log.entries[start:]
    graph_kinds = ("distill_select", "synthesize")
    return GcotResult(
        plan=plan,
        distilled=distilled,
        iterations=iterations,
        tokens_sent=sum(e.prompt_tokens for e in made),
        graph_tokens_sent=sum(e.graph_tokens for e in made),
        graph_calls=sum(1 for e in made if e.kind in graph_kinds),
        full_graph_tokens=token_count(graph),
        warnings=warnings,
    )
