"""Open-set retrieval metrics and lifelong-learning summary statistics.

Retrieval is scored identity-disjointly from training: every query is
ranked against the gallery by Euclidean distance between L2-normalised
embeddings, and judged by average precision and CMC.  Task-level scores
are collected into a lower-triangular accuracy matrix ``R`` whose entry
``R[i][j]`` is the score on task ``j``'s test split after training task
``i``; all forgetting/transfer summaries are derived from that matrix.

All floats written to disk go through one canonical formatter so that a
rerun with the same configuration and seed reproduces output files byte
for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import Model, ModelPair
from .tensor import TensorError

Array = np.ndarray

Matrix = list[list[float]]


def extract_features(model: Model, x: Array) -> Array:
    """Row-normalised embeddings; purely numpy, never touches the graph."""
    emb = model.embed_np(x)
    norms = np.sqrt((emb * emb).sum(axis=1, keepdims=True))
    return emb / np.maximum(norms, 1e-12)


def fused_features(pair: ModelPair, x: Array) -> Array:
    """Concatenate both models' normalised embeddings for retrieval."""
    return np.concatenate(
        [extract_features(pair.working, x), extract_features(pair.memory, x)], axis=1
    )


@dataclass
class RetrievalResult:
    """Per-query average precision plus the aggregate curve."""

    average_precisions: Array
    cmc: Array

    @property
    def mean_ap(self) -> float:
        return float(self.average_precisions.mean())

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])


def retrieve_and_score(query_f: Array, gallery_f: Array,
                       query_ids: Array, gallery_ids: Array) -> RetrievalResult:
    """Rank the gallery for each query and score AP and CMC.

    Every query identity must appear in the gallery, otherwise its AP is
    undefined and the call fails.  Distance ties rank the earlier gallery
    row first, which keeps results reproducible across runs.
    """
    qf = np.asarray(query_f, dtype=np.float64)
    gf = np.asarray(gallery_f, dtype=np.float64)
    qid = np.asarray(query_ids)
    gid = np.asarray(gallery_ids)
    if qf.ndim != 2 or gf.ndim != 2 or qf.shape[1] != gf.shape[1]:
        raise TensorError(
            f"retrieve_and_score: feature shapes disagree: {qf.shape} vs {gf.shape}"
        )
    if qid.shape[0] != qf.shape[0] or gid.shape[0] != gf.shape[0]:
        raise TensorError("retrieve_and_score: id arrays do not match feature rows")
    missing = set(qid.tolist()) - set(gid.tolist())
    if missing:
        raise TensorError(
            f"retrieve_and_score: query identities {sorted(missing)} have no gallery sample"
        )
    sq = ((qf[:, None, :] - gf[None, :, :]) ** 2).sum(axis=2)
    aps = np.zeros(qf.shape[0])
    first_hit = np.zeros(qf.shape[0], dtype=np.int64)
    for i in range(qf.shape[0]):
        order = np.argsort(sq[i], kind="stable")
        matches = gid[order] == qid[i]
        hit_ranks = np.flatnonzero(matches) + 1
        precision_at_hits = np.arange(1, hit_ranks.size + 1) / hit_ranks
        aps[i] = precision_at_hits.mean()
        first_hit[i] = hit_ranks[0]
    cmc = np.zeros(gf.shape[0])
    for rank in range(1, gf.shape[0] + 1):
        cmc[rank - 1] = float((first_hit <= rank).mean())
    return RetrievalResult(average_precisions=aps, cmc=cmc)


def _check_matrix(matrix: Matrix) -> int:
    if not matrix:
        raise ValueError("accuracy matrix is empty")
    for i, row in enumerate(matrix):
        if len(row) != i + 1:
            raise ValueError(
                f"accuracy matrix row {i + 1} has {len(row)} entries, expected {i + 1}"
            )
    return len(matrix)


def average_incremental_accuracy(matrix: Matrix) -> float:
    """Mean of the final row: how good the last model is on every task."""
    _check_matrix(matrix)
    return float(np.mean(matrix[-1]))


def backward_transfer(matrix: Matrix, mode: str = "paper") -> float:
    """How much training later tasks moved earlier-task scores.

    ``paper`` averages, over every step ``i`` before the last, the mean
    drop of tasks ``j <= i`` relative to their just-trained score;
    ``final_row`` compares only the final model against the diagonal.
    Negative values mean forgetting.
    """
    t = _check_matrix(matrix)
    if t < 2:
        raise ValueError("backward transfer needs at least two tasks")
    if mode == "paper":
        terms = []
        for i in range(t - 1):
            deltas = [matrix[i][j] - matrix[j][j] for j in range(i + 1)]
            terms.append(float(np.mean(deltas)))
        return float(np.mean(terms))
    if mode == "final_row":
        deltas = [matrix[t - 1][j] - matrix[j][j] for j in range(t - 1)]
        return float(np.mean(deltas))
    raise ValueError(f"unknown backward transfer mode {mode!r}")


def forward_transfer(matrix: Matrix, reference_diag: Sequence[float]) -> float:
    """Diagonal advantage over task-local models trained from scratch."""
    t = _check_matrix(matrix)
    if t < 2:
        raise ValueError("forward transfer needs at least two tasks")
    if len(reference_diag) != t:
        raise ValueError(
            f"need one reference score per task, got {len(reference_diag)} for {t}"
        )
    deltas = [matrix[i][i] - reference_diag[i] for i in range(1, t)]
    return float(np.mean(deltas))


def _canonical(value, out: list[str]) -> None:
    if isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _canonical(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _canonical(item, out)
        out.append("]")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            raise ValueError(f"refusing to serialise non-finite value {value!r}")
        out.append(format(float(value), ".12e"))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif value is None:
        out.append("null")
    else:
        raise TypeError(f"cannot serialise {type(value).__name__} canonically")


def canonical_json(payload: dict) -> str:
    """Serialise with sorted keys and fixed-width floats (13 significant
    digits), so equal payloads produce identical bytes."""
    out: list[str] = []
    _canonical(payload, out)
    out.append("\n")
    return "".join(out)


def write_metrics_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(canonical_json(payload))


def write_accuracy_matrix_csv(map_matrix: Matrix, rank1_matrix: Matrix, path: str) -> None:
    """One row per (training step, evaluated task) pair."""
    _check_matrix(map_matrix)
    _check_matrix(rank1_matrix)
    lines = ["step,task,map,rank1"]
    for i, (map_row, r1_row) in enumerate(zip(map_matrix, rank1_matrix), start=1):
        if len(map_row) != len(r1_row):
            raise ValueError("mAP and Rank-1 matrices have different shapes")
        for j, (m, r) in enumerate(zip(map_row, r1_row), start=1):
            lines.append(f"{i},{j},{format(float(m), '.12e')},{format(float(r), '.12e')}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_accuracy_matrix_csv(path: str) -> tuple[Matrix, Matrix]:
    """Inverse of :func:`write_accuracy_matrix_csv` (values, not bytes)."""
    with open(path, "r", encoding="ascii") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines or lines[0] != "step,task,map,rank1":
        raise ValueError(f"unrecognised accuracy matrix header in {path}")
    entries: dict[tuple[int, int], tuple[float, float]] = {}
    for line in lines[1:]:
        step_s, task_s, map_s, r1_s = line.split(",")
        entries[(int(step_s), int(task_s))] = (float(map_s), float(r1_s))
    t = max(step for step, _ in entries)
    map_matrix: Matrix = []
    rank1_matrix: Matrix = []
    for i in range(1, t + 1):
        map_row, r1_row = [], []
        for j in range(1, i + 1):
            if (i, j) not in entries:
                raise ValueError(f"accuracy matrix in {path} is missing entry ({i}, {j})")
            m, r = entries[(i, j)]
            map_row.append(m)
            r1_row.append(r)
        map_matrix.append(map_row)
        rank1_matrix.append(r1_row)
    return map_matrix, rank1_matrix
