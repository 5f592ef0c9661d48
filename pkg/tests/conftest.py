"""Session-wide fixtures for the expensive multi-seed comparison runs.

The five-seed sweep of every sequential strategy at package defaults is
computed once per session and shared by the acceptance gate and the
baseline-comparison tests; per-strategy wall-clock times are recorded so
runtime budgets can be asserted where they are part of the contract.
"""

from __future__ import annotations

import time

import pytest

from krkc import baselines as bl
from krkc import data as ds
from krkc import trainer as tr


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", ())
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report(request):
    """Verdict recorder: one PASS/FAIL line per criterion, echoed at exit."""
    lines = request.config._acceptance_lines

    def _report(num: int, slug: str, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {num:02d} {slug}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append(line)
        print(line)

    return _report

SWEEP_SEEDS = (0, 1, 2, 3, 4)


def _default_stream(seed: int):
    return ds.generate_stream(ds.StreamConfig(seed=seed))


@pytest.fixture(scope="session")
def default_sweep() -> dict:
    """Every sequential strategy at defaults, five seeds, shared references.

    Returns ``results[strategy][seed] -> SequenceResult``,
    ``references[seed] -> (map_diag, rank1_diag)`` from fresh single-task
    models, and ``wall[strategy] -> seconds`` summed over seeds.
    """
    cfg = tr.TrainConfig()
    results: dict[str, dict[int, tr.SequenceResult]] = {
        name: {} for name in bl.SEQUENTIAL_STRATEGIES
    }
    references: dict[int, tuple[list[float], list[float]]] = {}
    wall: dict[str, float] = {name: 0.0 for name in bl.SEQUENTIAL_STRATEGIES}
    wall["references"] = 0.0
    for seed in SWEEP_SEEDS:
        stream = _default_stream(seed)
        t0 = time.perf_counter()
        references[seed] = tr.reference_scores(stream, cfg, seed=seed)
        wall["references"] += time.perf_counter() - t0
        for name, flags in bl.SEQUENTIAL_STRATEGIES.items():
            t0 = time.perf_counter()
            results[name][seed] = tr.run_sequence(
                stream, cfg, flags, seed=seed, references=references[seed]
            )
            wall[name] += time.perf_counter() - t0
    return {
        "seeds": SWEEP_SEEDS,
        "results": results,
        "references": references,
        "wall": wall,
    }


@pytest.fixture(scope="session")
def joint_runs() -> dict:
    """Joint-training payloads per sweep seed (pooled-data upper bound)."""
    cfg = tr.TrainConfig()
    return {
        seed: bl.run_joint(_default_stream(seed), cfg, seed=seed)
        for seed in SWEEP_SEEDS
    }
