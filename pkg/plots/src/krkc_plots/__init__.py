"""Static figures from lifelong-retrieval run artifacts.

A run directory holds ``accuracy_matrix.csv`` (columns
``step,task,map,rank1``, one row per trained-step/evaluated-task pair)
and optionally ``metrics.json`` (read only for the strategy name shown
on legends).  This package consumes nothing else: no checkpoints, no
trainer import, so figures render anywhere the artifacts are copied.
"""

from .figures import (
    PlotSpec,
    build_curves_figure,
    build_heatmap_figure,
    curve_points,
    heatmap_cells,
    plot_accuracy_heatmap,
    plot_incremental_curves,
)
from .io import (
    CsvFormatError,
    MetricColumnError,
    PlotDataError,
    load_accuracy_matrix,
    load_run,
    strategy_label,
)

__version__ = "0.1.0"

__all__ = [
    "CsvFormatError",
    "MetricColumnError",
    "PlotDataError",
    "PlotSpec",
    "build_curves_figure",
    "build_heatmap_figure",
    "curve_points",
    "heatmap_cells",
    "load_accuracy_matrix",
    "load_run",
    "plot_accuracy_heatmap",
    "plot_incremental_curves",
    "strategy_label",
]
