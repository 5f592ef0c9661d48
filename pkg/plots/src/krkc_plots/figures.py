"""Figure builders: incremental-accuracy curves and a per-task heatmap.

The numeric helpers (:func:`curve_points`, :func:`heatmap_cells`) are
pure and carry the semantics; the ``build_*`` functions wrap them in
matplotlib figures that tests can inspect, and the ``plot_*`` entry
points save those figures to disk.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.figure import Figure

from .io import Matrix, PlotDataError, load_run

METRIC_AXIS = {"map": "mAP", "rank1": "Rank-1"}


@dataclass(frozen=True)
class PlotSpec:
    """What to draw: input run directories, metric and output path."""

    inputs: tuple[Path, ...]
    metric: str
    out: Path
    dpi: int = 120
    title: str | None = None

    def validate(self) -> None:
        if not self.inputs:
            raise PlotDataError("at least one input run directory is required")
        if self.metric not in METRIC_AXIS:
            raise PlotDataError(
                f"metric must be one of {sorted(METRIC_AXIS)}, got {self.metric!r}")


def curve_points(matrix: Matrix) -> list[float]:
    """Mean score over the tasks seen so far, one point per training step."""
    return [sum(row) / len(row) for row in matrix]


def heatmap_cells(matrix: Matrix) -> list[tuple[int, int, float]]:
    """The annotated (step, task, value) triples, 1-based, lower triangle."""
    return [
        (i, j, value)
        for i, row in enumerate(matrix, start=1)
        for j, value in enumerate(row, start=1)
    ]


def build_curves_figure(spec: PlotSpec) -> Figure:
    """One line per run: x is the training step, y the mean over seen tasks."""
    spec.validate()
    runs = [load_run(run_dir, spec.metric) for run_dir in spec.inputs]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    steps = 0
    for label, matrix in runs:
        ys = curve_points(matrix)
        steps = max(steps, len(ys))
        ax.plot(range(1, len(ys) + 1), ys, marker="o", label=label)
    ax.set_xticks(range(1, steps + 1))
    ax.set_xlabel("training step (tasks seen)")
    ax.set_ylabel(f"mean {METRIC_AXIS[spec.metric]} over seen tasks")
    ax.set_title(spec.title or "Average incremental accuracy")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def build_heatmap_figure(spec: PlotSpec) -> Figure:
    """Lower-triangular annotated matrix; the unseen upper triangle is blank."""
    spec.validate()
    if len(spec.inputs) != 1:
        raise PlotDataError(
            f"the heatmap draws a single run, got {len(spec.inputs)} input directories")
    label, matrix = load_run(spec.inputs[0], spec.metric)
    steps = len(matrix)
    grid = np.full((steps, steps), np.nan)
    for i, j, value in heatmap_cells(matrix):
        grid[i - 1, j - 1] = value
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    image = ax.imshow(grid, vmin=0.0, vmax=1.0, cmap="viridis")
    for i, j, value in heatmap_cells(matrix):
        shade = "white" if value < 0.55 else "black"
        ax.text(j - 1, i - 1, f"{value:.2f}", ha="center", va="center",
                color=shade, fontsize=9)
    ticks = [str(n) for n in range(1, steps + 1)]
    ax.set_xticks(range(steps), labels=ticks)
    ax.set_yticks(range(steps), labels=ticks)
    ax.set_xlabel("evaluated task")
    ax.set_ylabel("after training step")
    ax.set_title(spec.title or f"{label}: {METRIC_AXIS[spec.metric]} per task")
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    return fig


def _save(fig: Figure, spec: PlotSpec) -> Path:
    out = Path(spec.out)
    fig.savefig(out, dpi=spec.dpi)
    plt.close(fig)
    return out


def plot_incremental_curves(spec: PlotSpec) -> Path:
    """Render the curves figure to ``spec.out`` and return the path."""
    return _save(build_curves_figure(spec), spec)


def plot_accuracy_heatmap(spec: PlotSpec) -> Path:
    """Render the heatmap figure to ``spec.out`` and return the path."""
    return _save(build_heatmap_figure(spec), spec)
