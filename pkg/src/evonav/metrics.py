"""Benchmark metrics over episode outcomes.

All rates are percentages in [0, 100]. Success-weighted path length (SPL)
credits a successful episode by how close its executed path came to the
shortest feasible one; since that ratio never exceeds 1, SPL can never exceed
the plain success rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class SplSample:
    """One episode's contribution: success flag, executed path length p,
    shortest feasible length l (both meters, l > 0)."""

    success: bool
    path_length: float
    shortest_length: float

    def __post_init__(self):
        if not math.isfinite(self.path_length) or self.path_length < 0:
            raise MetricsError(f"bad path length {self.path_length}")
        if not math.isfinite(self.shortest_length) or self.shortest_length <= 0:
            raise MetricsError(f"bad shortest length {self.shortest_length}")

    @property
    def ratio(self) -> float:
        if not self.success:
            return 0.0
        return self.shortest_length / max(self.path_length, self.shortest_length)


def trajectory_length(states: np.ndarray | list) -> float:
    """Polyline length of an executed trajectory; accepts (N, 2), (N, 3), or a
    list of poses with .x/.y."""
    if len(states) == 0:
        return 0.0
    if hasattr(states[0], "x"):
        pts = np.array([[s.x, s.y] for s in states], dtype=float)
    else:
        pts = np.asarray(states, dtype=float)[:, :2]
    if pts.shape[0] < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def compute_spl(samples: list[SplSample]) -> float:
    if not samples:
        return 0.0
    return 100.0 * float(np.mean([s.ratio for s in samples]))


def compute_success_rate(successes: list[bool]) -> float:
    if not successes:
        return 0.0
    return 100.0 * sum(1 for s in successes if s) / len(successes)


def effective_epochs(success: bool, epochs_used: int, budget: int) -> int:
    """Epoch count a trial contributes to MAEC: what it used if it recovered,
    the full budget if it never did."""
    if epochs_used < 0 or budget < 0:
        raise MetricsError("epoch counts must be non-negative")
    return epochs_used if success else budget


def compute_maec(epoch_counts: list[int]) -> float:
    """Mean adaptation epochs. Feed it effective_epochs() per trial."""
    if not epoch_counts:
        return 0.0
    return float(np.mean([float(e) for e in epoch_counts]))


def compute_rgtr(graph_tokens_sent: int, full_graph_tokens: int, graph_calls: int) -> float:
    """Relative graph-token reduction against the always-send-everything
    baseline, clamped to [0, 100]. Degenerate baselines score zero."""
    baseline = full_graph_tokens * graph_calls
    if baseline <= 0:
        return 0.0
    value = 100.0 * (1.0 - graph_tokens_sent / baseline)
    return float(min(max(value, 0.0), 100.0))


@dataclass(frozen=True)
class MetricsSummary:
    episodes: int
    success_rate: float
    spl: float
    maec: float
    mean_tokens_sent: float
    mean_rgtr: float

    def as_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "spl": self.spl,
            "maec": self.maec,
            "mean_tokens_sent": self.mean_tokens_sent,
            "mean_rgtr": self.mean_rgtr,
        }


def summarize(
    spl_samples: list[SplSample],
    epoch_counts: list[int],
    tokens_sent: list[int],
    rgtr_values: list[float],
) -> MetricsSummary:
    return MetricsSummary(
        episodes=len(spl_samples),
        success_rate=compute_success_rate([s.success for s in spl_samples]),
        spl=compute_spl(spl_samples),
        maec=compute_maec(epoch_counts),
        mean_tokens_sent=float(np.mean(tokens_sent)) if tokens_sent else 0.0,
        mean_rgtr=float(np.mean(rgtr_values)) if rgtr_values else 0.0,
    )
