"""Comparison strategies expressed as flag settings of one trainer.

Every sequential strategy runs through exactly the same task loop; they
differ only in which parts are switched on, so measured gaps are
attributable to the method rather than to incidental code differences:

================  =========  ============  =========  =============
name              exemplars  distillation  teacher    consolidation
================  =========  ============  =========  =============
naive             no         no            none       none
frozen            yes        yes           frozen     none
refresh           yes        yes           refreshing none
krkc              yes        yes           refreshing msc+fsc
================  =========  ============  =========  =============

``joint`` is the odd one out: it pools every task's training data into
one canonically ordered dataset, trains once with the first-task recipe
and evaluates all tasks from that single model.  It ignores task
boundaries entirely, which makes it the customary upper bound; its
accuracy matrix is a single row and its transfer statistics are null.
"""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from . import evaluation as ev
from .data import ExemplarMemory, TaskDataset
from .models import ModelPair, save_pair
from .trainer import (
    NAIVE_FLAGS,
    Hook,
    StrategyFlags,
    TrainConfig,
    _expand_for_task,
    run_sequence,
    train_task,
)

SEQUENTIAL_STRATEGIES: dict[str, StrategyFlags] = {
    "naive": NAIVE_FLAGS,
    "frozen": StrategyFlags(
        name="frozen", use_exemplars=True, use_distillation=True,
        teacher_updates="frozen", consolidation="none",
    ),
    "refresh": StrategyFlags(
        name="refresh", use_exemplars=True, use_distillation=True,
        teacher_updates="refreshing", consolidation="none",
    ),
    "krkc": StrategyFlags(
        name="krkc", use_exemplars=True, use_distillation=True,
        teacher_updates="refreshing", consolidation="msc+fsc",
    ),
}

STRATEGY_NAMES = tuple(SEQUENTIAL_STRATEGIES) + ("joint",)


def strategy_from_name(name: str) -> StrategyFlags:
    if name not in SEQUENTIAL_STRATEGIES:
        raise ValueError(
            f"unknown strategy {name!r}; sequential strategies are "
            f"{sorted(SEQUENTIAL_STRATEGIES)} (plus 'joint')"
        )
    return SEQUENTIAL_STRATEGIES[name]


def pooled_dataset(stream: Sequence[TaskDataset]) -> TaskDataset:
    """Merge all tasks, sorted by identity so task order cannot matter."""
    if not stream:
        raise ValueError("cannot pool an empty stream")

    def well_ordered(xs: list[np.ndarray], ys: list[np.ndarray]):
        x = np.concatenate(xs, axis=0)
        y = np.concatenate(ys)
        order = np.argsort(y, kind="stable")
        return x[order], y[order]

    train_x, train_y = well_ordered([t.train_x for t in stream], [t.train_y for t in stream])
    query_x, query_ids = well_ordered([t.query_x for t in stream], [t.query_ids for t in stream])
    gallery_x, gallery_ids = well_ordered(
        [t.gallery_x for t in stream], [t.gallery_ids for t in stream]
    )
    return TaskDataset(
        task_id=0, train_x=train_x, train_y=train_y,
        query_x=query_x, query_ids=query_ids,
        gallery_x=gallery_x, gallery_ids=gallery_ids,
    )


def run_joint(
    stream: Sequence[TaskDataset],
    cfg: TrainConfig,
    seed: int,
    out_dir: str | None = None,
    config_echo: dict | None = None,
) -> dict:
    """Train once on the pooled data and score every task's test split."""
    cfg.validate()
    pooled = pooled_dataset(stream)
    root = np.random.SeedSequence([int(seed), 0x701])
    model_ss, expand_ss, batch_ss = root.spawn(3)
    pair = ModelPair.create(pooled.train_x.shape[1], cfg.hidden, cfg.d_emb,
                            seed=int(model_ss.generate_state(1)[0]))
    label_map: dict[int, int] = {}
    _expand_for_task(pair, pooled, expand_ss, label_map)
    log = train_task(
        pair, pooled, ExemplarMemory(cfg.exemplars_per_id, cfg.max_exemplar_ids),
        cfg, NAIVE_FLAGS, position=1, n_tasks=1,
        rng=np.random.default_rng(batch_ss), label_map=label_map,
    )
    map_row, r1_row = [], []
    for dataset in sorted(stream, key=lambda d: d.task_id):
        qf = ev.extract_features(pair.working, dataset.query_x)
        gf = ev.extract_features(pair.working, dataset.gallery_x)
        scored = ev.retrieve_and_score(qf, gf, dataset.query_ids, dataset.gallery_ids)
        map_row.append(scored.mean_ap)
        r1_row.append(scored.rank1)
    payload = {
        "schema": "krkc-metrics-v1",
        "strategy": "joint",
        "seed": int(seed),
        "n_tasks": len(stream),
        "avg_incremental_map": float(np.mean(map_row)),
        "avg_incremental_rank1": float(np.mean(r1_row)),
        "bwt_paper": None,
        "bwt_final_row": None,
        "fwt": None,
        "per_task": {
            "matrix_map": [list(map_row)],
            "matrix_rank1": [list(r1_row)],
            "reference_map": None,
            "reference_rank1": None,
        },
    }
    if config_echo is not None:
        payload["config"] = config_echo
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        ev.write_metrics_json(payload, os.path.join(out_dir, "metrics.json"))
        lines = ["step,task,map,rank1"]
        for j, (m, r) in enumerate(zip(map_row, r1_row), start=1):
            lines.append(f"1,{j},{format(m, '.12e')},{format(r, '.12e')}")
        with open(os.path.join(out_dir, "accuracy_matrix.csv"), "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(os.path.join(out_dir, "run_log.jsonl"), "w", encoding="ascii") as fh:
            for row in log.epoch_rows:
                fh.write(ev.canonical_json(row))
        save_pair(pair, os.path.join(out_dir, "checkpoints", "task_1.ckpt"))
    return payload


def run_strategy(
    name: str,
    stream: Sequence[TaskDataset],
    cfg: TrainConfig,
    seed: int,
    references: tuple[list[float], list[float]] | None = None,
    out_dir: str | None = None,
    config_echo: dict | None = None,
    hooks: Hook | None = None,
) -> dict:
    """Run one named strategy end to end and return its metrics payload."""
    if name == "joint":
        return run_joint(stream, cfg, seed, out_dir=out_dir, config_echo=config_echo)
    flags = strategy_from_name(name)
    result = run_sequence(
        stream, cfg, flags, seed, references=references,
        out_dir=out_dir, config_echo=config_echo, hooks=hooks,
    )
    return result.metrics_payload(config_echo)
