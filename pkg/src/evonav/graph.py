"""Hierarchical scene graph: root -> floor -> room -> object.

The canonical serialization is the single source of truth for token
accounting and for what the language model sees: nodes ordered by id, one
line each, embeddings never included. Byte-identical across runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np
import yaml

LEVELS = ("root", "floor", "room", "object")
LEVEL_RANK = {name: i for i, name in enumerate(LEVELS)}

# Tokenizer rule: split on whitespace and structural delimiters, count the
# non-empty pieces. Identifiers with underscores stay single tokens.
_TOKEN_SPLIT = re.compile(r'[\s{}\[\]:,"]+')


class GraphError(ValueError):
    pass


def count_text_tokens(text: str) -> int:
    return sum(1 for piece in _TOKEN_SPLIT.split(text) if piece)


@dataclass(frozen=True)
class SceneNode:
    node_id: str
    level: str
    tag: str = ""
    parent: str | None = None
    position: tuple[float, float] | None = None
    text: str = ""
    embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.level not in LEVEL_RANK:
            raise GraphError(f"unknown level {self.level!r} for node {self.node_id!r}")
        if not self.node_id:
            raise GraphError("node id must be non-empty")

    def serialize_line(self) -> str:
        parts = [f"id:{self.node_id}", f"level:{self.level}"]
        if self.tag:
            parts.append(f"tag:{self.tag}")
        if self.parent:
            parts.append(f"parent:{self.parent}")
        if self.position is not None:
            parts.append(f"pos:[{self.position[0]:.2f},{self.position[1]:.2f}]")
        return " ".join(parts)


class SceneGraph:
    """Mapping of node id to SceneNode plus the containment tree."""

    def __init__(self, nodes: list[SceneNode] | None = None, graph_id: str = "scene"):
        self.graph_id = graph_id
        self._nodes: dict[str, SceneNode] = {}
        for node in nodes or []:
            self.add(node)

    def add(self, node: SceneNode) -> None:
        if node.node_id in self._nodes:
            raise GraphError(f"duplicate node id {node.node_id!r}")
        self._nodes[node.node_id] = node

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def get(self, node_id: str) -> SceneNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node {node_id!r}") from None

    def nodes(self) -> list[SceneNode]:
        return [self._nodes[k] for k in sorted(self._nodes)]

    def nodes_at(self, level: str) -> list[SceneNode]:
        return [n for n in self.nodes() if n.level == level]

    def children(self, node_id: str) -> list[SceneNode]:
        return [n for n in self.nodes() if n.parent == node_id]

    def root(self) -> SceneNode:
        roots = self.nodes_at("root")
        if len(roots) != 1:
            raise GraphError(f"graph must have exactly one root, found {len(roots)}")
        return roots[0]

    def ancestors(self, node_id: str) -> list[SceneNode]:
        out = []
        node = self.get(node_id)
        seen = {node.node_id}
        while node.parent is not None:
            node = self.get(node.parent)
            if node.node_id in seen:
                raise GraphError("containment cycle detected")
            seen.add(node.node_id)
            out.append(node)
        return out

    def room_of(self, node_id: str) -> SceneNode | None:
        node = self.get(node_id)
        if node.level == "room":
            return node
        for anc in self.ancestors(node_id):
            if anc.level == "room":
                return anc
        return None

    def validate(self) -> list[str]:
        """Structural lint; returns human-readable violations (empty = valid)."""
        issues: list[str] = []
        roots = [n for n in self._nodes.values() if n.level == "root"]
        if len(roots) != 1:
            issues.append(f"expected exactly one root node, found {len(roots)}")
        for node in self.nodes():
            if node.level == "root":
                if node.parent is not None:
                    issues.append(f"root node {node.node_id} must not have a parent")
                continue
            if node.parent is None:
                issues.append(f"node {node.node_id} has no parent")
                continue
            if node.parent not in self._nodes:
                issues.append(f"node {node.node_id} has unknown parent {node.parent}")
                continue
            parent = self._nodes[node.parent]
            if LEVEL_RANK[parent.level] != LEVEL_RANK[node.level] - 1:
                issues.append(
                    f"node {node.node_id} ({node.level}) under {parent.node_id} ({parent.level}) "
                    "violates level ordering"
                )
        # reachability from the root (tree property)
        if len(roots) == 1:
            reachable = {roots[0].node_id}
            frontier = [roots[0].node_id]
            while frontier:
                nid = frontier.pop()
                for child in self._nodes.values():
                    if child.parent == nid and child.node_id not in reachable:
                        reachable.add(child.node_id)
                        frontier.append(child.node_id)
            for nid in sorted(self._nodes):
                if nid not in reachable:
                    issues.append(f"node {nid} is not reachable from the root")
        for node in self.nodes():
            if node.embedding is not None:
                norm = float(np.linalg.norm(node.embedding))
                if abs(norm - 1.0) > 1e-6:
                    issues.append(f"node {node.node_id} embedding norm {norm:.8f} != 1")
            if node.level in ("room", "object") and node.position is None:
                issues.append(f"node {node.node_id} ({node.level}) has no position")
        return issues

    def copy(self) -> "SceneGraph":
        return SceneGraph(list(self._nodes.values()), graph_id=self.graph_id)

    def serialize(self) -> str:
        """Canonical text form: '{' + one line per node ordered by id + '}'.
        Embeddings are never serialized."""
        lines = [node.serialize_line() for node in self.nodes()]
        if not lines:
            return "{}"
        return "{\n" + "\n".join(lines) + "\n}"


class DistilledGraph(SceneGraph):
    """A SceneGraph whose nodes are a subset of a parent graph."""

    def __init__(self, nodes: list[SceneNode], parent_graph_id: str, iteration: int,
                 graph_id: str = "distilled"):
        super().__init__(nodes, graph_id=graph_id)
        self.parent_graph_id = parent_graph_id
        self.iteration = iteration


def token_count(graph: SceneGraph) -> int:
    """Tokens in the canonical serialization (whitespace/structural split)."""
    return count_text_tokens(graph.serialize())


def form_element_graph(graph: SceneGraph, node_ids: list[str], iteration: int = 0) -> DistilledGraph:
    """Selected nodes plus their ancestor closure, so the distilled graph is a
    connected subtree of the parent."""
    keep: set[str] = set()
    for nid in node_ids:
        node = graph.get(nid)
        keep.add(node.node_id)
        for anc in graph.ancestors(nid):
            keep.add(anc.node_id)
    nodes = [graph.get(nid) for nid in sorted(keep)]
    return DistilledGraph(nodes, parent_graph_id=graph.graph_id, iteration=iteration)


def corrupt(graph: SceneGraph, edit: dict) -> SceneGraph:
    """Apply one corruption (add_phantom | move | delete) to a copy.

    The input graph is never mutated; corruption models wrong robot memory,
    not a change in the world.
    """
    op = edit.get("op")
    out = graph.copy()
    if op == "add_phantom":
        node = SceneNode(
            node_id=edit["id"],
            level=edit.get("level", "object"),
            tag=edit.get("tag", ""),
            parent=edit.get("parent"),
            position=tuple(edit["position"]) if edit.get("position") is not None else None,
            text=edit.get("text", ""),
        )
        if node.parent is not None and node.parent not in out:
            raise GraphError(f"phantom parent {node.parent!r} not in graph")
        out.add(node)
        return out
    if op == "move":
        node = out.get(edit["id"])
        out._nodes[node.node_id] = replace(node, position=tuple(edit["position"]))
        return out
    if op == "delete":
        node = out.get(edit["id"])
        if out.children(node.node_id):
            raise GraphError(f"cannot delete node {node.node_id!r} with children")
        del out._nodes[node.node_id]
        return out
    raise GraphError(f"unknown corruption op {op!r}")


def attach_embeddings(graph: SceneGraph, embedder) -> SceneGraph:
    """Fill in missing embeddings for room/object nodes from node text (or the
    tag when no text was given)."""
    out = graph.copy()
    for node in out.nodes():
        if node.level in ("room", "object") and node.embedding is None:
            source = node.text or node.tag or node.node_id
            out._nodes[node.node_id] = replace(node, embedding=embedder.embed(source))
    return out


def load_graph(path, embedder=None) -> SceneGraph:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict) or "nodes" not in data:
        raise GraphError(f"bad graph file {path}")
    graph = SceneGraph(graph_id=str(data.get("id", "scene")))
    for item in data["nodes"]:
        emb = item.get("embedding")
        graph.add(
            SceneNode(
                node_id=str(item["id"]),
                level=str(item["level"]),
                tag=str(item.get("tag", "")),
                parent=item.get("parent"),
                position=tuple(item["position"]) if item.get("position") is not None else None,
                text=str(item.get("text", "")),
                embedding=np.asarray(emb, dtype=float) if emb is not None else None,
            )
        )
    issues = graph.validate()
    if issues:
        raise GraphError(f"invalid graph {path}: " + "; ".join(issues))
    if embedder is not None:
        graph = attach_embeddings(graph, embedder)
    return graph


def save_graph(graph: SceneGraph, path, include_embeddings: bool = False) -> None:
    nodes = []
    for node in graph.nodes():
        item: dict = {"id": node.node_id, "level": node.level}
        if node.tag:
            item["tag"] = node.tag
        if node.parent is not None:
            item["parent"] = node.parent
        if node.position is not None:
            item["position"] = [float(node.position[0]), float(node.position[1])]
        if node.text:
            item["text"] = node.text
        if include_embeddings and node.embedding is not None:
            item["embedding"] = [float(v) for v in node.embedding]
        nodes.append(item)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump({"id": graph.graph_id, "nodes": nodes}, fh, sort_keys=False)
