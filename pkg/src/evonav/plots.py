"""Diagnostic figures rendered to SVG.

Figures are deterministic: the Agg backend, a pinned hash salt, and stripped
date metadata keep repeated renders byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .scenario import Scenario  # noqa: E402
from .world import apply_world_injection  # noqa: E402

plt.rcParams["svg.hashsalt"] = "evonav"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def _final_world(scenario: Scenario):
    world = scenario.world
    for inj in scenario.injections:
        if inj.kind in ("spawn_obstacle", "block_cells"):
            world = apply_world_injection(world, inj.kind, inj.payload)
    return world


def plot_trajectory(scenario: Scenario, report: dict, path) -> None:
    """Map view: occupancy, obstacle points, executed trajectory."""
    world = _final_world(scenario)
    res = world.resolution
    rows, cols = world.grid.shape
    fig, ax = plt.subplots(figsize=(7, 7 * rows / max(cols, 1)))
    ax.imshow(
        world.grid,
        origin="lower",
        extent=(0, cols * res, 0, rows * res),
        cmap="Greys",
        vmin=0,
        vmax=1,
        alpha=0.35,
        interpolation="nearest",
    )
    pts = world.obstacle_points()
    if pts.shape[0]:
        ax.plot(pts[:, 0], pts[:, 1], ".", color="#444444", markersize=1.5)
    traj = np.asarray(report.get("trajectory", []), dtype=float)
    if traj.size:
        ax.plot(traj[:, 0], traj[:, 1], "-", color="#1766a6", linewidth=1.4)
        ax.plot(traj[0, 0], traj[0, 1], "o", color="#2a9d2a", markersize=7, label="start")
        ax.plot(traj[-1, 0], traj[-1, 1], "s", color="#c23b22", markersize=7, label="end")
    for name, (x, y) in world.objects.items():
        ax.plot(x, y, "*", color="#c98f00", markersize=10)
        ax.annotate(name, (x, y), fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax.set_xlim(0, cols * res)
    ax.set_ylim(0, rows * res)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{report.get('scenario', scenario.name)}: {report.get('status', '')}")
    if traj.size:
        ax.legend(loc="best", fontsize=7)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_loss(report: dict, path) -> None:
    """Evolution loss per epoch, advisor epochs marked."""
    records = report.get("evolution", [])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if records:
        xs = list(range(len(records)))
        losses = [r["loss"] for r in records]
        ax.plot(xs, losses, "-", color="#555555", linewidth=1)
        for x, rec in zip(xs, records):
            marker = "s" if rec["mode"] == "IL" else "o"
            color = "#b03030" if rec["mode"] == "IL" else "#1766a6"
            ax.plot(x, rec["loss"], marker, color=color, markersize=5)
        ax.set_xticks(xs)
        ax.set_xticklabels([f"{r['round']}.{r['epoch']}" for r in records], fontsize=6)
    else:
        ax.text(0.5, 0.5, "no evolution epochs", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("round.epoch")
    ax.set_ylabel("segment loss")
    ax.set_title("evolution loss (squares: advisor epochs)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_params(report: dict, path) -> None:
    """Parameter trajectories across evolution epochs."""
    records = report.get("evolution", [])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    series = {"q_s": [], "p_v": [], "eta": []}
    start = report.get("initial_params")
    if start:
        for key in series:
            series[key].append(start[key])
    for rec in records:
        for key in series:
            series[key].append(rec["params"][key])
    if series["q_s"]:
        xs = list(range(len(series["q_s"])))
        for key, color in (("q_s", "#1766a6"), ("p_v", "#2a9d2a"), ("eta", "#b03030")):
            ax.plot(xs, series[key], "-o", color=color, markersize=4, label=key)
        ax.legend(fontsize=8)
    else:
        ax.text(0.5, 0.5, "no parameter history", ha="center", va="center",
                transform=ax.transAxes)
    ax.set_xlabel("epoch (0 = initial)")
    ax.set_ylabel("value")
    ax.set_title("planner parameters")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_all(scenario: Scenario, report: dict, out_dir) -> list[str]:
    import os

    os.makedirs(out_dir, exist_ok=True)
    name = report.get("scenario", scenario.name)
    outputs = []
    for suffix, fn in (
        ("trajectory", lambda p: plot_trajectory(scenario, report, p)),
        ("loss", lambda p: plot_loss(report, p)),
        ("params", lambda p: plot_params(report, p)),
    ):
        path = os.path.join(out_dir, f"{name}_{suffix}.svg")
        fn(path)
        outputs.append(path)
    return outputs
