"""Optional PNG figures rendered from the same data as the CSV reports.

Uses the object-oriented matplotlib API with the Agg canvas, so no display
or global pyplot state is involved.
"""
from __future__ import annotations

import os

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .report import COMPARISON_ROWS, ComparisonTable, ExperimentRecord, lap_trend


def _figure(size=(6.0, 4.0)) -> Figure:
    fig = Figure(figsize=size, layout="constrained")
    FigureCanvasAgg(fig)
    return fig


def lap_trend_figure(record: ExperimentRecord) -> Figure:
    rows = lap_trend(record.laps)
    fig = _figure()
    ax = fig.add_subplot()
    if rows:
        lap, t, running = (np.array(c) for c in zip(*rows))
        ax.plot(lap, t, "o-", label="lap time")
        ax.plot(lap, running, ":", label="running average")
        ax.axhline(running[-1], linestyle="--", color="gray",
                   label=f"average {running[-1]:.2f} s")
        ax.set_xticks(lap)
        ax.legend()
    ax.set_xlabel("lap")
    ax.set_ylabel("time (s)")
    ax.set_title(f"{record.experiment_id}: lap times")
    return fig


def error_map_figure(record: ExperimentRecord) -> Figure:
    if not record.error_map:
        raise ValueError(f"{record.experiment_id} has no error map")
    data = np.array(record.error_map)
    fig = _figure((6.0, 4.5))
    ax = fig.add_subplot()
    sc = ax.scatter(data[:, 0], data[:, 1], c=data[:, 2], s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="APE (m)")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"{record.experiment_id}: trajectory error")
    return fig


def comparison_figure(table: ComparisonTable) -> Figure:
    labels = dict(COMPARISON_ROWS)
    n = len(table.rows)
    cols = 4
    fig = _figure((3.0 * cols, 2.6 * ((n + cols - 1) // cols)))
    axes = fig.subplots((n + cols - 1) // cols, cols, squeeze=False).ravel()
    x = np.arange(len(table.columns))
    for ax, name, row in zip(axes, table.rows, table.cells):
        heights = [np.nan if v is None else v for v in row]
        ax.bar(x, heights)
        ax.set_xticks(x, table.columns, rotation=30, ha="right", fontsize=7)
        ax.set_title(labels.get(name, name), fontsize=9)
    for ax in axes[n:]:
        ax.set_visible(False)
    return fig


def save(fig: Figure, path: str) -> str:
    fig.savefig(path, dpi=120)
    return path


def save_experiment_figures(record: ExperimentRecord, out_dir: str) -> list[str]:
    target = os.path.join(out_dir, record.experiment_id)
    os.makedirs(target, exist_ok=True)
    paths = [save(lap_trend_figure(record), os.path.join(target, "lap_trend.png"))]
    if record.error_map:
        paths.append(save(error_map_figure(record), os.path.join(target, "error_map.png")))
    return paths
