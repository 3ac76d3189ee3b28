"""Command-line entry points.

Everything runs offline by default: the mock backend replays scripted model
responses, and the http backend must be asked for explicitly (and given a
config file) before any network client is even constructed.
"""

from __future__ import annotations

import csv
import json
import os

import click
import numpy as np
import yaml

from .clients import HashedBagEmbedder
from .memory import ParameterMemory
from .metrics import SplSample, compute_maec, compute_spl, compute_success_rate
from .orchestrator import build_bundle, report_json, run_serp, write_report
from .planner import PlannerParams
from .plots import render_all
from .scenario import load_scenario, validate_scenario
from .world import RobotState, WorldError

MODES = ("ilad", "ad_only", "il_only")


@click.group()
def main():
    """Self-evolving navigation stack: run scenarios, benchmark, inspect."""


def _load_http_config(path: str | None) -> dict | None:
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh) or {}


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Scenario YAML.")
@click.option("--backend", type=click.Choice(["mock", "http"]), default="mock",
              show_default=True)
@click.option("--http-config", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Endpoint config for the http backend.")
@click.option("--mode", type=click.Choice(MODES), default=None,
              help="Override the scenario's evolution mode.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Recorded in the report; the episode itself is deterministic.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Report JSON path (default: <scenario>_report.json).")
@click.option("--plots-dir", type=click.Path(file_okay=False), default=None,
              help="Also render diagnostic SVGs into this directory.")
def run(scenario_path, backend, http_config, mode, seed, out_path, plots_dir):
    """Run one episode and write its JSON report."""
    scenario = load_scenario(scenario_path)
    bundle = build_bundle(scenario, backend=backend,
                          http_config=_load_http_config(http_config))
    report = run_serp(scenario, bundle, mode=mode)
    report["seed"] = seed
    if out_path is None:
        out_path = os.path.splitext(scenario_path)[0] + "_report.json"
    write_report(report, out_path)
    if plots_dir:
        for p in render_all(scenario, report, plots_dir):
            click.echo(f"plot: {p}")
    click.echo(
        f"{report['scenario']}: status={report['status']} spl={report['spl']:.1f} "
        f"epochs={report['epochs_total']} tokens={report['tokens_sent']} -> {out_path}"
    )


def _jitter_start(scenario, rng, jitter: float):
    """Perturbed copy of the start pose that stays in free space."""
    if jitter <= 0:
        return scenario.start
    for _ in range(20):
        dx, dy = rng.uniform(-jitter, jitter, size=2)
        dth = rng.uniform(-2.0, 2.0) * jitter
        x, y = scenario.start.x + dx, scenario.start.y + dy
        r = int(np.floor(y / scenario.world.resolution))
        c = int(np.floor(x / scenario.world.resolution))
        rows, cols = scenario.world.grid.shape
        if 0 <= r < rows and 0 <= c < cols and scenario.world.grid[r, c] == 0:
            try:
                return RobotState(x, y, scenario.start.theta + dth)
            except WorldError:
                continue
    return scenario.start


@main.command()
@click.option("--scenario", "scenario_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Scenario YAML; repeat for a suite.")
@click.option("--modes", default="ilad", show_default=True,
              help="Comma-separated evolution modes to benchmark.")
@click.option("--trials", type=int, default=3, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed for start-pose deviations across trials.")
@click.option("--jitter", type=float, default=0.05, show_default=True,
              help="Start-pose deviation amplitude in meters (trial 0 is exact).")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def bench(scenario_paths, modes, trials, seed, jitter, out_dir):
    """Benchmark scenarios across evolution modes; write trial and summary CSVs."""
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    for m in mode_list:
        if m not in MODES:
            raise click.BadParameter(f"unknown mode {m!r}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)

    trial_rows = []
    summary_rows = []
    for scenario_path in scenario_paths:
        for mode in mode_list:
            samples, epochs, tokens, rgtrs = [], [], [], []
            for trial in range(trials):
                scenario = load_scenario(scenario_path)
                if trial > 0:
                    scenario.start = _jitter_start(scenario, rng, jitter)
                bundle = build_bundle(scenario, backend="mock")
                report = run_serp(scenario, bundle, mode=mode)
                sample = SplSample(
                    success=report["success"],
                    path_length=max(report["trajectory_length"], 0.0),
                    shortest_length=report["shortest_length"],
                )
                samples.append(sample)
                epochs.append(report["maec_epochs"])
                tokens.append(report["tokens_sent"])
                rgtrs.append(report["rgtr"])
                trial_rows.append({
                    "scenario": report["scenario"],
                    "mode": mode,
                    "trial": trial,
                    "outcome": report["status"],
                    "spl": f"{report['spl']:.4f}",
                    "epochs": report["epochs_total"],
                    "maec_epochs": report["maec_epochs"],
                    "tokens_sent": report["tokens_sent"],
                    "rgtr": f"{report['rgtr']:.4f}",
                })
            summary_rows.append({
                "scenario": os.path.splitext(os.path.basename(scenario_path))[0],
                "mode": mode,
                "trials": trials,
                "success_rate": f"{compute_success_rate([s.success for s in samples]):.4f}",
                "spl": f"{compute_spl(samples):.4f}",
                "maec": f"{compute_maec(epochs):.4f}",
                "mean_tokens_sent": f"{float(np.mean(tokens)):.2f}",
                "mean_rgtr": f"{float(np.mean(rgtrs)):.4f}",
            })

    trials_path = os.path.join(out_dir, "trials.csv")
    with open(trials_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(trial_rows[0].keys()))
        writer.writeheader()
        writer.writerows(trial_rows)
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary_rows[0].keys()))
        writer.writeheader()
        writer.writerows(summary_rows)
    click.echo(f"wrote {trials_path} and {summary_path}")
    for row in summary_rows:
        click.echo(
            f"{row['scenario']} [{row['mode']}]: SR={row['success_rate']} "
            f"SPL={row['spl']} MAEC={row['maec']} RGTR={row['mean_rgtr']}"
        )


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def validate(scenario_path):
    """Check a scenario file for consistency problems."""
    scenario = load_scenario(scenario_path)
    issues = validate_scenario(scenario)
    if issues:
        for issue in issues:
            click.echo(f"issue: {issue}")
        raise SystemExit(1)
    click.echo(f"{scenario.name}: ok")


@main.command()
@click.option("--store", "store_path", required=True, type=click.Path(dir_okay=False),
              help="Memory store YAML (created if missing).")
@click.option("--time", "time_s", type=float, required=True)
@click.option("--pose", nargs=3, type=float, required=True, metavar="X Y THETA")
@click.option("--text", required=True, help="Failure-context description.")
@click.option("--params", nargs=3, type=float, required=True, metavar="Q_S P_V ETA")
def memorize(store_path, time_s, pose, text, params):
    """Append one parameter record to a memory store."""
    if os.path.exists(store_path):
        memory = ParameterMemory.load(store_path)
    else:
        memory = ParameterMemory()
    rec_id = memory.memorize(
        time=time_s,
        pose=tuple(pose),
        text=text,
        params=PlannerParams(*params),
        embedder=HashedBagEmbedder(),
    )
    memory.save(store_path)
    click.echo(f"stored record {rec_id} in {store_path}")


@main.command()
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--query", required=True)
@click.option("--k", type=int, default=3, show_default=True)
def retrieve(store_path, query, k):
    """Query a memory store and print the structured answer as JSON."""
    memory = ParameterMemory.load(store_path)
    answer = memory.retrieve(query, k, HashedBagEmbedder())
    click.echo(json.dumps(answer.as_dict(), sort_keys=True, indent=2))


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def plot(scenario_path, report_path, out_dir):
    """Render the diagnostic SVGs for a finished episode report."""
    scenario = load_scenario(scenario_path)
    with open(report_path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    for p in render_all(scenario, report, out_dir):
        click.echo(f"plot: {p}")


@main.command("show-report")
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def show_report(report_path):
    """Pretty-print a report without its bulky fields."""
    with open(report_path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    for key in ("model_log", "trajectory"):
        report.pop(key, None)
    click.echo(report_json(report))


if __name__ == "__main__":
    main()
