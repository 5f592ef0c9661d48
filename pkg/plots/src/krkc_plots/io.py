"""Read-only loaders for the two artifacts a run directory exposes.

``accuracy_matrix.csv`` must be a complete lower triangle: a run that
trained ``T`` steps reports every pair ``(step, task)`` with
``1 <= task <= step <= T``.  Loading validates eagerly so a bad file
fails with its row number instead of producing a silently wrong figure.
``metrics.json`` is consulted only for the strategy name; a directory
without one is labelled by its basename.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

Matrix = list[list[float]]

METRICS = ("map", "rank1")


class PlotDataError(Exception):
    """An input artifact is missing, malformed or incomplete."""


class MetricColumnError(PlotDataError):
    """The CSV header lacks the requested metric column."""

    def __init__(self, path: Path, metric: str, header: tuple[str, ...]) -> None:
        self.metric = metric
        super().__init__(
            f"{path}: metric column {metric!r} not found, "
            f"header has {list(header)}"
        )


class CsvFormatError(PlotDataError):
    """A CSV line failed to parse or violated the matrix shape."""

    def __init__(self, path: Path, row: int, message: str) -> None:
        self.row = row
        super().__init__(f"{path}: row {row}: {message}")


def load_accuracy_matrix(path: str | Path, metric: str = "rank1") -> Matrix:
    """Parse one metric out of ``accuracy_matrix.csv`` as a ragged matrix.

    Row ``i`` (1-based training step) of the result holds the scores of
    tasks ``1..i``.  Raises :class:`CsvFormatError` with the offending
    physical row number on parse problems, :class:`MetricColumnError`
    when the header lacks ``metric`` and :class:`PlotDataError` when the
    triangle has holes.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    path = Path(path)
    if not path.is_file():
        raise PlotDataError(f"{path}: no such file")
    with path.open("r", encoding="ascii", errors="replace", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(path, 1, "empty file, expected a header")
    header = tuple(name.strip() for name in rows[0])
    for required in ("step", "task"):
        if required not in header:
            raise CsvFormatError(
                path, 1, f"header must contain {required!r}, got {list(header)}")
    if metric not in header:
        raise MetricColumnError(path, metric, header)
    col = {name: header.index(name) for name in header}

    entries: dict[tuple[int, int], float] = {}
    for row_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(
                path, row_no, f"expected {len(header)} fields, got {len(row)}")
        try:
            step = int(row[col["step"]])
            task = int(row[col["task"]])
            value = float(row[col[metric]])
        except ValueError as exc:
            raise CsvFormatError(path, row_no, str(exc)) from None
        if step < 1 or task < 1 or task > step:
            raise CsvFormatError(
                path, row_no,
                f"cell (step={step}, task={task}) lies outside the lower triangle")
        if not math.isfinite(value):
            raise CsvFormatError(path, row_no, f"non-finite {metric} value")
        if (step, task) in entries:
            raise CsvFormatError(
                path, row_no, f"duplicate cell (step={step}, task={task})")
        entries[(step, task)] = value
    if not entries:
        raise CsvFormatError(path, 2, "no data rows")

    steps = max(step for step, _ in entries)
    matrix: Matrix = []
    for i in range(1, steps + 1):
        row_vals: list[float] = []
        for j in range(1, i + 1):
            if (i, j) not in entries:
                raise PlotDataError(
                    f"{path}: incomplete matrix, cell (step={i}, task={j}) is missing")
            row_vals.append(entries[(i, j)])
        matrix.append(row_vals)
    return matrix


def strategy_label(run_dir: str | Path) -> str:
    """Legend label for a run: its metrics summary name or the dir name."""
    run_dir = Path(run_dir)
    meta = run_dir / "metrics.json"
    if meta.is_file():
        try:
            payload = json.loads(meta.read_text(encoding="ascii", errors="replace"))
        except ValueError as exc:
            raise PlotDataError(f"{meta}: unreadable metrics summary: {exc}") from None
        name = payload.get("strategy") if isinstance(payload, dict) else None
        if isinstance(name, str) and name:
            return name
    return run_dir.name


def load_run(run_dir: str | Path, metric: str) -> tuple[str, Matrix]:
    """Label and accuracy matrix of one run directory."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise PlotDataError(f"{run_dir}: no such run directory")
    matrix = load_accuracy_matrix(run_dir / "accuracy_matrix.csv", metric)
    return strategy_label(run_dir), matrix
