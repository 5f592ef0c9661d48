"""Lifelong training loop for the working/memory model pair.

Within a task, every iteration runs up to two optimiser steps:

1. a rehearsal step trains the working model on the new batch with
   cross-entropy, a triplet term (mined in the new batch, and in an
   exemplar batch when replay is enabled) and an anti-forgetting JS
   divergence toward the memory model's predictions;
2. a refreshing step then trains the memory model with the mirrored
   loss, distilling from the working model's freshly updated predictions
   at a much smaller learning rate.

Each step touches exactly one model: the other appears only through
detached predictions, never receives gradient, and is bit-identical
before and after the step.

At a task boundary the pair is optionally consolidated in parameter
space (the working model moves toward the memory model with weight
``t/(t+1)``), the memory model becomes a copy of the working model, and
the exemplar memory absorbs the task's farthest-from-centroid samples.
Evaluation happens before the boundary, using the two trained models as
they finished the task; with feature fusion enabled their normalised
embeddings are concatenated for retrieval.

The first task is a plain supervised bootstrap: no teacher exists yet,
so only the working model trains, and the boundary simply copies it
into the memory model.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import evaluation as ev
from .data import Batch, ExemplarMemory, TaskDataset, pk_sample
from .losses import LossBreakdown, refreshing_loss, rehearsal_loss
from .models import (
    ModelPair,
    consolidate_model_space,
    save_pair,
    sync_memory_to_working,
)
from .tensor import AdamState, Tensor, adam_step, take_cols, zero_grads

Array = np.ndarray

Hook = Callable[[str, dict], None]

TEACHER_MODES = ("none", "frozen", "refreshing")
CONSOLIDATION_MODES = ("none", "msc", "fsc", "msc+fsc")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyperparameters, shared by every strategy."""

    e_max: int = 30
    gamma: float = 3.5e-4
    eta_subsequent: float = 3.5e-5
    eta_last: float = 3.5e-6
    lr_decay: float = 0.1
    temperature: float = 2.0
    margin: float = 0.3
    p_ids: int = 8
    k_instances: int = 4
    hidden: tuple[int, ...] = (64, 64)
    d_emb: int = 32
    exemplars_per_id: int = 2
    max_exemplar_ids: int = 250
    distill_full_logits: bool = True
    open_ended: bool = False

    def validate(self) -> None:
        if self.e_max < 1:
            raise ValueError(f"e_max must be positive, got {self.e_max}")
        for name in ("gamma", "eta_subsequent", "eta_last"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.margin < 0.0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")
        if self.p_ids < 2 or self.k_instances < 2:
            raise ValueError("PK batches need at least two identities and two instances")
        if self.d_emb < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.exemplars_per_id < 1 or self.max_exemplar_ids < 1:
            raise ValueError("exemplar limits must be positive")


@dataclass(frozen=True)
class StrategyFlags:
    """Which parts of the method a run uses.

    ``teacher_updates`` selects how the memory model behaves during a
    task ("frozen" keeps the previous snapshot, "refreshing" trains it
    slowly); ``consolidation`` selects the boundary averaging ("msc"),
    retrieval-time feature fusion ("fsc"), both, or neither.
    """

    name: str
    use_exemplars: bool
    use_distillation: bool
    teacher_updates: str
    consolidation: str

    def validate(self) -> None:
        if self.teacher_updates not in TEACHER_MODES:
            raise ValueError(f"unknown teacher mode {self.teacher_updates!r}")
        if self.consolidation not in CONSOLIDATION_MODES:
            raise ValueError(f"unknown consolidation mode {self.consolidation!r}")
        rehearsing = self.use_exemplars and self.use_distillation
        if self.teacher_updates != "none" and not rehearsing:
            raise ValueError(
                "a teacher requires both exemplars and distillation to be enabled"
            )
        if self.teacher_updates == "none" and (self.use_distillation or
                                               self.consolidation != "none"):
            raise ValueError(
                "distillation and consolidation require a teacher mode"
            )

    @property
    def fuses_features(self) -> bool:
        return self.consolidation in ("fsc", "msc+fsc")

    @property
    def averages_parameters(self) -> bool:
        return self.consolidation in ("msc", "msc+fsc")


def learning_rates(position: int, n_tasks: int, epoch: int,
                   cfg: TrainConfig) -> tuple[float, float]:
    """Working and memory learning rates for a 1-based epoch.

    The first task decays after two thirds of the epochs, later tasks
    after half.  The memory rate drops another decade on the final task,
    where stability matters most, unless the run is declared open-ended.
    """
    if position < 1 or epoch < 1:
        raise ValueError("task position and epoch are 1-based")
    if position == 1:
        decay_epoch = math.ceil(2 * cfg.e_max / 3)
    else:
        decay_epoch = math.ceil(cfg.e_max / 2)
    factor = cfg.lr_decay if epoch > decay_epoch else 1.0
    last = position == n_tasks and position > 1 and not cfg.open_ended
    eta = cfg.eta_last if last else cfg.eta_subsequent
    return cfg.gamma * factor, eta * factor


@dataclass
class TaskTrainLog:
    """Per-batch loss curves and per-epoch means for one task."""

    task_id: int
    position: int
    batch_totals: dict[str, list[float]] = field(default_factory=dict)
    epoch_rows: list[dict] = field(default_factory=list)


def _forward_batch(model, batch: Batch) -> tuple[Tensor, Tensor]:
    return model.forward(batch.x)


def _epoch_means(rows: list[dict[str, float]]) -> dict[str, float]:
    keys = ("distill", "ce", "trip", "total")
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def train_task(
    pair: ModelPair,
    dataset: TaskDataset,
    memory: ExemplarMemory,
    cfg: TrainConfig,
    flags: StrategyFlags,
    position: int,
    n_tasks: int,
    rng: np.random.Generator,
    label_map: dict[int, int],
    hooks: Hook | None = None,
) -> TaskTrainLog:
    """Run ``e_max`` epochs of paired updates on one task.

    ``position`` is the task's 1-based place in this model's curriculum
    (reference runs always pass 1) and drives the learning-rate schedule.
    The boundary work (consolidation, memory refill, evaluation) is the
    caller's job; this function only performs the per-batch updates.
    """
    cfg.validate()
    flags.validate()
    first = position == 1
    distill = flags.use_distillation and not first
    replay = flags.use_exemplars and not first and bool(memory)
    refresh = flags.teacher_updates == "refreshing" and not first

    batch_size = cfg.p_ids * cfg.k_instances
    batches_per_epoch = max(1, dataset.n_train // batch_size)
    opt_w = AdamState(pair.working.params())
    opt_m = AdamState(pair.memory.params()) if refresh else None

    old_stop = pair.working.classifier.range_for(dataset.task_id)[0]
    log = TaskTrainLog(task_id=dataset.task_id, position=position)
    log.batch_totals["working"] = []
    if refresh:
        log.batch_totals["memory"] = []

    for epoch in range(1, cfg.e_max + 1):
        gamma_e, eta_e = learning_rates(position, n_tasks, epoch, cfg)
        epoch_w: list[dict[str, float]] = []
        epoch_m: list[dict[str, float]] = []
        for batch_index in range(batches_per_epoch):
            new = pk_sample(dataset.train_by_id, cfg.p_ids, cfg.k_instances, rng)
            classes = np.array([label_map[int(y)] for y in new.y], dtype=np.int64)
            exemplar = (
                pk_sample(memory.by_id, cfg.p_ids, cfg.k_instances, rng)
                if replay else None
            )
            if hooks:
                hooks("batch_start", {
                    "pair": pair, "task": dataset.task_id,
                    "epoch": epoch, "batch": batch_index,
                })

            emb_w, logits_w = _forward_batch(pair.working, new)
            teacher_w: Tensor | None = None
            distill_student_w: Tensor | None = None
            if distill:
                teacher_np = pair.memory.forward_np(new.x)[1]
                if not cfg.distill_full_logits:
                    distill_student_w = take_cols(logits_w, 0, old_stop)
                    teacher_np = teacher_np[:, :old_stop]
                teacher_w = Tensor(teacher_np)
            ex_emb_w = None if exemplar is None else pair.working.extractor.forward(exemplar.x)
            loss_w: LossBreakdown = rehearsal_loss(
                working_logits=logits_w,
                memory_logits=teacher_w,
                working_emb_new=emb_w,
                new_labels=classes,
                working_emb_exemplar=ex_emb_w,
                exemplar_labels=None if exemplar is None else exemplar.y,
                temperature=cfg.temperature,
                margin=cfg.margin,
                distill_logits=distill_student_w,
            )
            zero_grads(pair.working.params())
            loss_w.total.backward()
            adam_step(pair.working.params(), opt_w, gamma_e)
            zero_grads(pair.working.params() + pair.memory.params())
            values_w = loss_w.values()
            log.batch_totals["working"].append(values_w["total"])
            epoch_w.append(values_w)
            if hooks:
                hooks("rehearsal_step_done", {
                    "pair": pair, "task": dataset.task_id,
                    "epoch": epoch, "batch": batch_index,
                })

            if refresh:
                teacher_np = pair.working.forward_np(new.x)[1]
                emb_m, logits_m = _forward_batch(pair.memory, new)
                distill_student_m: Tensor | None = None
                teacher_m = teacher_np
                if not cfg.distill_full_logits:
                    distill_student_m = take_cols(logits_m, 0, old_stop)
                    teacher_m = teacher_np[:, :old_stop]
                ex_emb_m = None if exemplar is None else pair.memory.extractor.forward(exemplar.x)
                loss_m = refreshing_loss(
                    memory_logits=logits_m,
                    working_logits=Tensor(teacher_m),
                    memory_emb_new=emb_m,
                    new_labels=classes,
                    memory_emb_exemplar=ex_emb_m,
                    exemplar_labels=None if exemplar is None else exemplar.y,
                    temperature=cfg.temperature,
                    margin=cfg.margin,
                    distill_logits=distill_student_m,
                )
                zero_grads(pair.memory.params())
                loss_m.total.backward()
                adam_step(pair.memory.params(), opt_m, eta_e)
                zero_grads(pair.working.params() + pair.memory.params())
                values_m = loss_m.values()
                log.batch_totals["memory"].append(values_m["total"])
                epoch_m.append(values_m)
                if hooks:
                    hooks("refreshing_step_done", {
                        "pair": pair, "task": dataset.task_id,
                        "epoch": epoch, "batch": batch_index,
                        "teacher_logits": teacher_np, "batch_x": new.x,
                    })

        row = {"task": dataset.task_id, "position": position, "epoch": epoch,
               "model": "working", "lr": gamma_e}
        row.update(_epoch_means(epoch_w))
        log.epoch_rows.append(row)
        if refresh:
            row_m = {"task": dataset.task_id, "position": position, "epoch": epoch,
                     "model": "memory", "lr": eta_e}
            row_m.update(_epoch_means(epoch_m))
            log.epoch_rows.append(row_m)
    return log


@dataclass
class SequenceResult:
    """Everything a lifelong run produced: matrices, logs and the pair."""

    strategy: str
    seed: int
    map_matrix: ev.Matrix
    rank1_matrix: ev.Matrix
    reference_map: list[float] | None
    reference_rank1: list[float] | None
    epoch_rows: list[dict]
    task_logs: list[TaskTrainLog]
    pair: ModelPair

    def metrics_payload(self, config_echo: dict | None = None) -> dict:
        t = len(self.map_matrix)
        bwt_paper = bwt_final = fwt = None
        if t >= 2:
            bwt_paper = {"map": ev.backward_transfer(self.map_matrix, "paper"),
                         "rank1": ev.backward_transfer(self.rank1_matrix, "paper")}
            bwt_final = {"map": ev.backward_transfer(self.map_matrix, "final_row"),
                         "rank1": ev.backward_transfer(self.rank1_matrix, "final_row")}
            if self.reference_map is not None and self.reference_rank1 is not None:
                fwt = {"map": ev.forward_transfer(self.map_matrix, self.reference_map),
                       "rank1": ev.forward_transfer(self.rank1_matrix, self.reference_rank1)}
        payload = {
            "schema": "krkc-metrics-v1",
            "strategy": self.strategy,
            "seed": self.seed,
            "n_tasks": t,
            "avg_incremental_map": ev.average_incremental_accuracy(self.map_matrix),
            "avg_incremental_rank1": ev.average_incremental_accuracy(self.rank1_matrix),
            "bwt_paper": bwt_paper,
            "bwt_final_row": bwt_final,
            "fwt": fwt,
            "per_task": {
                "matrix_map": [list(row) for row in self.map_matrix],
                "matrix_rank1": [list(row) for row in self.rank1_matrix],
                "reference_map": (
                    None if self.reference_map is None else list(self.reference_map)
                ),
                "reference_rank1": (
                    None if self.reference_rank1 is None else list(self.reference_rank1)
                ),
            },
        }
        if config_echo is not None:
            payload["config"] = config_echo
        return payload


def _evaluate_seen_tasks(pair: ModelPair, stream: Sequence[TaskDataset],
                         upto: int, fuse: bool) -> tuple[list[float], list[float]]:
    map_row, r1_row = [], []
    for dataset in stream[:upto]:
        if fuse:
            qf = ev.fused_features(pair, dataset.query_x)
            gf = ev.fused_features(pair, dataset.gallery_x)
        else:
            qf = ev.extract_features(pair.working, dataset.query_x)
            gf = ev.extract_features(pair.working, dataset.gallery_x)
        scored = ev.retrieve_and_score(qf, gf, dataset.query_ids, dataset.gallery_ids)
        map_row.append(scored.mean_ap)
        r1_row.append(scored.rank1)
    return map_row, r1_row


def _expand_for_task(pair: ModelPair, dataset: TaskDataset,
                     seed_seq: np.random.SeedSequence,
                     label_map: dict[int, int]) -> None:
    ids = sorted(dataset.train_by_id)
    start = pair.working.classifier.n_classes
    pair.expand_classifier(dataset.task_id, len(ids), seed=int(seed_seq.generate_state(1)[0]))
    for offset, identity in enumerate(ids):
        label_map[identity] = start + offset


def reference_scores(stream: Sequence[TaskDataset], cfg: TrainConfig,
                     seed: int) -> tuple[list[float], list[float]]:
    """Single-task scores from fresh models, the forward-transfer baseline.

    Task ``i`` gets its own randomly initialised pair, trained with the
    first-task recipe and budget on task ``i`` alone, then scored on task
    ``i``'s test split with plain working-model features.  Seeds derive
    only from ``(seed, i)``, so sweeps and single runs agree bitwise.
    """
    ref_map, ref_r1 = [], []
    for dataset in stream:
        root = np.random.SeedSequence([int(seed), 0x5EF, dataset.task_id])
        model_ss, expand_ss, batch_ss = root.spawn(3)
        d_in = dataset.train_x.shape[1]
        pair = ModelPair.create(d_in, cfg.hidden, cfg.d_emb,
                                seed=int(model_ss.generate_state(1)[0]))
        label_map: dict[int, int] = {}
        _expand_for_task(pair, dataset, expand_ss, label_map)
        train_task(
            pair, dataset, ExemplarMemory(cfg.exemplars_per_id, cfg.max_exemplar_ids),
            cfg, NAIVE_FLAGS, position=1, n_tasks=1,
            rng=np.random.default_rng(batch_ss), label_map=label_map,
        )
        qf = ev.extract_features(pair.working, dataset.query_x)
        gf = ev.extract_features(pair.working, dataset.gallery_x)
        scored = ev.retrieve_and_score(qf, gf, dataset.query_ids, dataset.gallery_ids)
        ref_map.append(scored.mean_ap)
        ref_r1.append(scored.rank1)
    return ref_map, ref_r1


NAIVE_FLAGS = StrategyFlags(
    name="naive", use_exemplars=False, use_distillation=False,
    teacher_updates="none", consolidation="none",
)


def run_sequence(
    stream: Sequence[TaskDataset],
    cfg: TrainConfig,
    flags: StrategyFlags,
    seed: int,
    references: tuple[list[float], list[float]] | None = None,
    out_dir: str | None = None,
    config_echo: dict | None = None,
    hooks: Hook | None = None,
    compute_references: bool = True,
) -> SequenceResult:
    """Train the full task sequence under one strategy and score it.

    After each task the seen tasks are evaluated with the trained pair
    (fused features when the strategy fuses, except after the first task,
    where the memory model has not been trained yet), and only then is
    the boundary applied: parameter averaging when enabled, the memory
    model re-synced to the working model, and the exemplar memory
    refilled from the boundary model.  With ``out_dir`` set, the run writes
    ``metrics.json``, ``accuracy_matrix.csv``, ``run_log.jsonl`` and one
    checkpoint per boundary, all byte-deterministic in config and seed.
    """
    cfg.validate()
    flags.validate()
    if not stream:
        raise ValueError("cannot train on an empty stream")
    n_tasks = len(stream)
    d_in = stream[0].train_x.shape[1]

    root = np.random.SeedSequence(int(seed))
    model_ss, exemplar_ss, *task_ss = root.spawn(2 + n_tasks)
    pair = ModelPair.create(d_in, cfg.hidden, cfg.d_emb,
                            seed=int(model_ss.generate_state(1)[0]))
    memory = ExemplarMemory(cfg.exemplars_per_id, cfg.max_exemplar_ids)
    exemplar_rng = np.random.default_rng(exemplar_ss)
    label_map: dict[int, int] = {}

    map_matrix: ev.Matrix = []
    rank1_matrix: ev.Matrix = []
    epoch_rows: list[dict] = []
    task_logs: list[TaskTrainLog] = []
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)

    for position, dataset in enumerate(stream, start=1):
        expand_ss, batch_ss = task_ss[position - 1].spawn(2)
        _expand_for_task(pair, dataset, expand_ss, label_map)
        log = train_task(
            pair, dataset, memory, cfg, flags, position, n_tasks,
            rng=np.random.default_rng(batch_ss), label_map=label_map, hooks=hooks,
        )
        task_logs.append(log)
        epoch_rows.extend(log.epoch_rows)

        fuse = flags.fuses_features and position >= 2
        map_row, r1_row = _evaluate_seen_tasks(pair, stream, position, fuse)
        map_matrix.append(map_row)
        rank1_matrix.append(r1_row)

        if flags.averages_parameters and position >= 2:
            consolidate_model_space(pair, t=position)
        else:
            sync_memory_to_working(pair)
        if flags.use_exemplars:
            memory.update(pair.working, dataset, exemplar_rng)
        if out_dir is not None:
            save_pair(pair, os.path.join(out_dir, "checkpoints", f"task_{position}.ckpt"))

    if references is None and compute_references and n_tasks >= 2:
        references = reference_scores(stream, cfg, seed)
    ref_map, ref_r1 = references if references is not None else (None, None)

    result = SequenceResult(
        strategy=flags.name, seed=int(seed),
        map_matrix=map_matrix, rank1_matrix=rank1_matrix,
        reference_map=ref_map, reference_rank1=ref_r1,
        epoch_rows=epoch_rows, task_logs=task_logs, pair=pair,
    )
    if out_dir is not None:
        ev.write_metrics_json(result.metrics_payload(config_echo),
                              os.path.join(out_dir, "metrics.json"))
        ev.write_accuracy_matrix_csv(map_matrix, rank1_matrix,
                                     os.path.join(out_dir, "accuracy_matrix.csv"))
        with open(os.path.join(out_dir, "run_log.jsonl"), "w", encoding="ascii") as fh:
            for row in epoch_rows:
                fh.write(ev.canonical_json(row))
    return result
