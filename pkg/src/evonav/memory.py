"""Parameter memory: scene descriptions paired with planner parameters.

Retrieval is an exact linear scan by cosine similarity: the store is small
and exactness is what the tests pin down. Ranks tie-break toward the older
record so results never depend on sort stability details.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml

from .planner import PlannerParams


class MemoryError_(ValueError):
    pass


class ColdStartError(MemoryError_):
    """Retrieval from an empty store."""


@dataclass(frozen=True)
class MemoryRecord:
    rec_id: int
    time: float
    pose: tuple[float, float, float]
    text: str
    embedding: np.ndarray
    params: PlannerParams


@dataclass(frozen=True)
class RetrievalAnswer:
    """Top-k answer; parallel lists ordered by descending score."""

    times: list[float]
    poses: list[tuple[float, float, float]]
    texts: list[str]
    parameters: list[dict[str, float]]
    scores: list[float]

    def as_dict(self) -> dict:
        return {
            "times": list(self.times),
            "poses": [list(p) for p in self.poses],
            "texts": list(self.texts),
            "parameters": [dict(p) for p in self.parameters],
            "scores": list(self.scores),
        }


class ParameterMemory:
    def __init__(self, dim: int | None = None):
        self.dim = dim
        self._records: list[MemoryRecord] = []
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[MemoryRecord]:
        return list(self._records)

    def _check_embedding(self, embedding: np.ndarray) -> np.ndarray:
        vec = np.asarray(embedding, dtype=float)
        if vec.ndim != 1:
            raise MemoryError_("embedding must be a vector")
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise MemoryError_(f"embedding dimension {vec.size} != store dimension {self.dim}")
        norm = float(np.linalg.norm(vec))
        if not math.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise MemoryError_(f"embedding must be unit-norm, got {norm}")
        return vec

    def memorize(
        self,
        time: float,
        pose: tuple[float, float, float],
        text: str,
        params: PlannerParams,
        embedder=None,
        embedding: np.ndarray | None = None,
    ) -> int:
        """Store one record; returns its monotonically increasing id."""
        if not text:
            raise MemoryError_("text must be non-empty")
        if embedding is None:
            if embedder is None:
                raise MemoryError_("need an embedder or a precomputed embedding")
            embedding = embedder.embed(text)
        vec = self._check_embedding(embedding)
        rec = MemoryRecord(
            rec_id=self._next_id,
            time=float(time),
            pose=(float(pose[0]), float(pose[1]), float(pose[2])),
            text=text,
            embedding=vec,
            params=params,
        )
        self._records.append(rec)
        self._next_id += 1
        return rec.rec_id

    def remove(self, rec_id: int) -> None:
        before = len(self._records)
        self._records = [r for r in self._records if r.rec_id != rec_id]
        if len(self._records) == before:
            raise MemoryError_(f"no record with id {rec_id}")

    def remove_by_params(self, params: PlannerParams) -> int:
        """Remove every record holding exactly these parameters; returns the
        number removed (used by the memory-removal experiment)."""
        keep = [r for r in self._records if r.params != params]
        removed = len(self._records) - len(keep)
        self._records = keep
        return removed

    def retrieve(self, query: str, k: int, embedder) -> RetrievalAnswer:
        if not self._records:
            raise ColdStartError("cold start: parameter memory is empty")
        if k < 1:
            raise MemoryError_("k must be >= 1")
        qv = self._check_embedding(embedder.embed(query))
        scored = [(float(qv @ r.embedding), r) for r in self._records]
        # descending score; equal scores go to the older (lower id) record
        scored.sort(key=lambda item: (-item[0], item[1].rec_id))
        top = scored[: min(k, len(scored))]
        return RetrievalAnswer(
            times=[r.time for _, r in top],
            poses=[r.pose for _, r in top],
            texts=[r.text for _, r in top],
            parameters=[r.params.as_dict() for _, r in top],
            scores=[s for s, _ in top],
        )

    def retrieve_initial(self, query: str, k: int, embedder) -> tuple[PlannerParams, RetrievalAnswer]:
        """Rank-1 parameters for seeding an episode, plus the full answer."""
        answer = self.retrieve(query, k, embedder)
        top = answer.parameters[0]
        return PlannerParams(top["q_s"], top["p_v"], top["eta"]), answer

    def save(self, path) -> None:
        records = []
        for r in self._records:
            records.append(
                {
                    "id": r.rec_id,
                    "time": r.time,
                    "pose": [r.pose[0], r.pose[1], r.pose[2]],
                    "text": r.text,
                    "embedding": [float(v) for v in r.embedding],
                    "params": r.params.as_dict(),
                }
            )
        data = {"dim": self.dim, "next_id": self._next_id, "records": records}
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(data, fh, sort_keys=False)

    @classmethod
    def load(cls, path) -> "ParameterMemory":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict) or "records" not in data:
            raise MemoryError_(f"bad memory store file {path}")
        store = cls(dim=data.get("dim"))
        for item in data["records"]:
            p = item["params"]
            vec = store._check_embedding(np.asarray(item["embedding"], dtype=float))
            rec = MemoryRecord(
                rec_id=int(item["id"]),
                time=float(item["time"]),
                pose=tuple(float(v) for v in item["pose"]),
                text=str(item["text"]),
                embedding=vec,
                params=PlannerParams(float(p["q_s"]), float(p["p_v"]), float(p["eta"])),
            )
            store._records.append(rec)
        store._next_id = int(data.get("next_id", (max((r.rec_id for r in store._records), default=-1) + 1)))
        return store
