"""Markdown and CSV rendering of experiment results."""

from __future__ import annotations

import json
from typing import Sequence

from .features import TASKS
from .trainer import ExperimentRow, MetricsReport


def rows_to_csv(rows: Sequence[ExperimentRow]) -> str:
    lines = ["label,task,seed,mae_days,rmse_days,mape,cost_s,n_test"]
    for r in rows:
        lines.append(f"{r.label},{r.task},{r.seed},{r.mae_days!r},{r.rmse_days!r},"
                     f"{r.mape!r},{r.cost_s!r},{r.n_test}")
    return "\n".join(lines) + "\n"


def rows_from_csv(text: str) -> list[ExperimentRow]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    rows = []
    for ln in lines[1:]:
        label, task, seed, mae_d, rmse_d, mape_f, cost, n_test = ln.split(",")
        rows.append(ExperimentRow(label=label, task=task, seed=int(seed), mae_days=float(mae_d),
                                  rmse_days=float(rmse_d), mape=float(mape_f), cost_s=float(cost),
                                  n_test=int(n_test)))
    return rows


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _aggregate(rows: Sequence[ExperimentRow]):
    """Mean metrics per (label, task) over seeds, preserving first-seen label order."""
    labels: list[str] = []
    cells: dict[tuple[str, str], dict[str, list[float]]] = {}
    for r in rows:
        if r.label not in labels:
            labels.append(r.label)
        cell = cells.setdefault((r.label, r.task), {"mae": [], "rmse": [], "mape": [], "cost": []})
        cell["mae"].append(r.mae_days)
        cell["rmse"].append(r.rmse_days)
        cell["mape"].append(r.mape)
        cell["cost"].append(r.cost_s)
    return labels, cells


def results_markdown(rows: Sequence[ExperimentRow], title: str,
                     metrics: Sequence[str] = ("mae", "rmse", "mape"),
                     tasks: Sequence[str] | None = None) -> str:
    """One row per label, column groups per task (seed-averaged), paper-table layout."""
    labels, cells = _aggregate(rows)
    if tasks is None:
        present = {r.task for r in rows}
        tasks = [t for t in TASKS if t in present] or sorted(present)
    names = {"mae": "MAE", "rmse": "RMSE", "mape": "MAPE", "cost": "Cost"}
    header = ["method"] + [f"{task} {names[m]}" for task in tasks for m in metrics]
    lines = [f"## {title}", "",
             "| " + " | ".join(header) + " |",
             "|" + "---|" * len(header)]
    for label in labels:
        row = [label]
        for task in tasks:
            cell = cells.get((label, task))
            for m in metrics:
                if cell is None:
                    row.append("-")
                elif m == "mape":
                    row.append(f"{_mean(cell[m]):.3f}")
                else:
                    row.append(f"{_mean(cell[m]):.2f}")
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")
    lines.append("MAE/RMSE in days, MAPE as a fraction, Cost in seconds"
                 " (0.0 under deterministic mode); seed-averaged."
                 if "cost" in metrics else
                 "MAE/RMSE in days, MAPE as a fraction; seed-averaged.")
    return "\n".join(lines) + "\n"


def bars_csv(rows: Sequence[ExperimentRow]) -> str:
    """Plot-ready long format: one bar per (label, task), seed-averaged MAE."""
    labels, cells = _aggregate(rows)
    lines = ["label,task,mae_days,rmse_days,mape"]
    for label in labels:
        for task in TASKS:
            cell = cells.get((label, task))
            if cell is None:
                continue
            lines.append(f"{label},{task},{_mean(cell['mae'])!r},{_mean(cell['rmse'])!r},"
                         f"{_mean(cell['mape'])!r}")
    return "\n".join(lines) + "\n"


def metrics_to_json(report: MetricsReport) -> str:
    return json.dumps({
        "task": report.task,
        "mae_days": report.mae_days,
        "rmse_days": report.rmse_days,
        "mape": report.mape,
        "n_test": report.n_test,
        "wall_s": report.wall_s,
    }, indent=2, sort_keys=True)


def metrics_markdown(report: MetricsReport) -> str:
    return (f"| task | MAE (days) | RMSE (days) | MAPE | n | wall (s) |\n"
            f"|---|---|---|---|---|---|\n"
            f"| {report.task} | {report.mae_days:.3f} | {report.rmse_days:.3f} "
            f"| {report.mape:.4f} | {report.n_test} | {report.wall_s:.2f} |\n")
