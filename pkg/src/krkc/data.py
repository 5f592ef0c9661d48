"""Synthetic stream of domain-shifted identity tasks, plus exemplar memory.

Each identity is a latent vector; each task embeds latents into the input
space through its own orthogonal transform.  Task transforms share a base
rotation and differ by ``expm(domain_shift * S_t)`` for a random
normalised skew-symmetric ``S_t``, so ``domain_shift`` is the largest
principal rotation angle (in radians) between any task and the base
domain.  The first ``shared_latent_dims`` latent coordinates are pinned:
``S_t`` is zero on them, so that block of identity structure is common
to every domain while the remaining coordinates rotate away from it,
mirroring how identity datasets share subject structure but differ in
imaging conditions.  Setting the shift to zero collapses all tasks onto
one domain; setting the noise scale to zero makes every sample of an
identity identical.

Train and test identities are disjoint everywhere: evaluation is open-set
retrieval, never classification of seen identities.  Identity ids are
globally unique across tasks (train ids count up from zero and double as
classifier class indices; test ids live far above them).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple

import numpy as np
from scipy.linalg import expm
from scipy.stats import ortho_group

from .models import Model

Array = np.ndarray

TEST_ID_BASE = 1_000_000


@dataclass(frozen=True)
class StreamConfig:
    """Shape and difficulty of the synthetic task stream."""

    n_tasks: int = 4
    ids_per_task: int = 32
    samples_per_id: int = 12
    test_ids_per_task: int = 16
    query_per_test_id: int = 2
    gallery_per_test_id: int = 6
    d_in: int = 32
    latent_dim: int = 8
    shared_latent_dims: int = 3
    domain_shift: float = 2.6
    noise_scale: float = 0.45
    seed: int = 0

    def validate(self) -> None:
        if self.n_tasks < 1:
            raise ValueError(f"need at least one task, got {self.n_tasks}")
        if self.ids_per_task < 2 or self.test_ids_per_task < 2:
            raise ValueError("retrieval needs at least two identities per task")
        if self.samples_per_id < 2:
            raise ValueError("identities need at least two samples")
        if self.query_per_test_id < 1 or self.gallery_per_test_id < 1:
            raise ValueError("test identities need query and gallery samples")
        if not (1 <= self.latent_dim <= self.d_in):
            raise ValueError(
                f"latent dimension must lie in [1, {self.d_in}], got {self.latent_dim}"
            )
        if not (0 <= self.shared_latent_dims <= self.latent_dim):
            raise ValueError(
                "shared latent dimensions must lie in "
                f"[0, {self.latent_dim}], got {self.shared_latent_dims}"
            )
        if self.domain_shift < 0.0 or self.noise_scale < 0.0:
            raise ValueError("domain shift and noise scale must be non-negative")


@dataclass
class TaskDataset:
    """One task: labelled training samples and an open-set test split."""

    task_id: int
    train_x: Array
    train_y: Array
    query_x: Array
    query_ids: Array
    gallery_x: Array
    gallery_ids: Array
    train_by_id: dict[int, Array] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self.train_by_id:
            for identity in np.unique(self.train_y):
                self.train_by_id[int(identity)] = self.train_x[self.train_y == identity]

    @property
    def n_train_ids(self) -> int:
        return len(self.train_by_id)

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]


class Batch(NamedTuple):
    x: Array
    y: Array


def _task_transform(base_q: Array, rng: np.random.Generator, shift: float,
                    pinned: int) -> Array:
    d = base_q.shape[0]
    a = rng.normal(size=(d, d))
    skew = 0.5 * (a - a.T)
    skew[:pinned, :] = 0.0
    skew[:, :pinned] = 0.0
    norm = np.linalg.norm(skew, 2)
    if norm == 0.0:
        return base_q.copy()
    return base_q @ expm((shift / norm) * skew)


def _embed_latents(q: Array, bias: Array, latents: Array) -> Array:
    return latents @ q[:, : latents.shape[1]].T + bias


def generate_stream(config: StreamConfig) -> list[TaskDataset]:
    """Materialise the full task sequence deterministically from the seed."""
    config.validate()
    root = np.random.SeedSequence(config.seed)
    base_seed, *task_seeds = root.spawn(1 + config.n_tasks)
    base_rng = np.random.default_rng(base_seed)
    base_q = ortho_group.rvs(config.d_in, random_state=base_rng)
    base_bias = base_rng.normal(size=config.d_in)

    stream: list[TaskDataset] = []
    next_train_id = 0
    next_test_id = TEST_ID_BASE
    for t, task_seed in enumerate(task_seeds, start=1):
        rng = np.random.default_rng(task_seed)
        q = _task_transform(base_q, rng, config.domain_shift,
                            config.shared_latent_dims)
        bias = base_bias + config.domain_shift * rng.normal(size=config.d_in)

        train_ids = np.arange(next_train_id, next_train_id + config.ids_per_task)
        next_train_id += config.ids_per_task
        latents = rng.normal(size=(config.ids_per_task, config.latent_dim))
        clean = _embed_latents(q, bias, latents)
        train_x = np.repeat(clean, config.samples_per_id, axis=0)
        train_x = train_x + config.noise_scale * rng.normal(size=train_x.shape)
        train_y = np.repeat(train_ids, config.samples_per_id)

        test_ids = np.arange(next_test_id, next_test_id + config.test_ids_per_task)
        next_test_id += config.test_ids_per_task
        test_latents = rng.normal(size=(config.test_ids_per_task, config.latent_dim))
        per_id = config.query_per_test_id + config.gallery_per_test_id
        test_clean = np.repeat(_embed_latents(q, bias, test_latents), per_id, axis=0)
        test_x = test_clean + config.noise_scale * rng.normal(size=test_clean.shape)
        test_y = np.repeat(test_ids, per_id)
        mask = np.tile(
            np.array([True] * config.query_per_test_id + [False] * config.gallery_per_test_id),
            config.test_ids_per_task,
        )
        stream.append(
            TaskDataset(
                task_id=t,
                train_x=train_x,
                train_y=train_y,
                query_x=test_x[mask],
                query_ids=test_y[mask],
                gallery_x=test_x[~mask],
                gallery_ids=test_y[~mask],
            )
        )
    return stream


def pk_sample(by_id: Mapping[int, Array], p: int, k: int,
              rng: np.random.Generator) -> Batch:
    """Draw ``p`` identities and ``k`` samples of each.

    Identities are drawn without replacement; samples are drawn without
    replacement when an identity has at least ``k``, with replacement
    otherwise.  Every batch therefore satisfies the triplet miner's
    needs: ``p >= 2`` labels, ``k >= 2`` samples per label.
    """
    if p < 2 or k < 2:
        raise ValueError(f"a PK batch needs p >= 2 and k >= 2, got p={p}, k={k}")
    ids = sorted(by_id)
    if len(ids) < p:
        raise ValueError(f"cannot draw {p} identities from a pool of {len(ids)}")
    chosen = rng.choice(len(ids), size=p, replace=False)
    xs, ys = [], []
    for idx in chosen:
        identity = ids[int(idx)]
        rows = by_id[identity]
        if rows.shape[0] >= k:
            take = rng.choice(rows.shape[0], size=k, replace=False)
        else:
            take = rng.choice(rows.shape[0], size=k, replace=True)
        xs.append(rows[take])
        ys.append(np.full(k, identity, dtype=np.int64))
    return Batch(x=np.concatenate(xs, axis=0), y=np.concatenate(ys))


def select_exemplars(model: Model, dataset: TaskDataset, per_id: int = 2,
                     max_ids: int = 250,
                     rng: np.random.Generator | None = None) -> list[tuple[int, Array]]:
    """Keep each identity's samples farthest from its embedding centroid.

    Identities are capped at ``max_ids`` per task by a seeded uniform
    subset.  Ties in distance resolve toward the earlier sample, and an
    identity with fewer than ``per_id`` samples is kept whole.
    """
    if per_id < 1:
        raise ValueError(f"per_id must be positive, got {per_id}")
    ids = sorted(dataset.train_by_id)
    if len(ids) > max_ids:
        if rng is None:
            raise ValueError("an RNG is required when capping identities")
        keep = rng.choice(len(ids), size=max_ids, replace=False)
        ids = sorted(ids[int(i)] for i in keep)
    selected: list[tuple[int, Array]] = []
    for identity in ids:
        rows = dataset.train_by_id[identity]
        if rows.shape[0] <= per_id:
            selected.append((identity, rows.copy()))
            continue
        emb = model.embed_np(rows)
        centroid = emb.mean(axis=0)
        dist = np.sqrt(((emb - centroid) ** 2).sum(axis=1))
        order = np.argsort(-dist, kind="stable")[:per_id]
        selected.append((identity, rows[np.sort(order)].copy()))
    return selected


class ExemplarMemory:
    """Replay buffer of a few raw samples per past identity.

    Stores inputs, not embeddings: rehearsal re-encodes exemplars with the
    current models every step, so the stored geometry never goes stale.
    """

    def __init__(self, per_id: int = 2, max_ids_per_task: int = 250) -> None:
        if per_id < 1 or max_ids_per_task < 1:
            raise ValueError("exemplar memory limits must be positive")
        self.per_id = per_id
        self.max_ids_per_task = max_ids_per_task
        self._store: dict[int, Array] = {}
        self.task_ids: dict[int, list[int]] = {}

    def update(self, model: Model, dataset: TaskDataset,
               rng: np.random.Generator) -> None:
        picked = select_exemplars(
            model, dataset, per_id=self.per_id, max_ids=self.max_ids_per_task, rng=rng
        )
        added = []
        for identity, rows in picked:
            if identity in self._store:
                raise ValueError(f"identity {identity} is already in exemplar memory")
            self._store[identity] = rows
            added.append(identity)
        self.task_ids[dataset.task_id] = added

    @property
    def by_id(self) -> dict[int, Array]:
        return self._store

    @property
    def n_identities(self) -> int:
        return len(self._store)

    def __len__(self) -> int:
        return sum(rows.shape[0] for rows in self._store.values())

    def __bool__(self) -> bool:
        return bool(self._store)


def _rows_of(dataset: TaskDataset) -> Iterator[tuple[int, int, str, Array]]:
    for identity, x in zip(dataset.train_y, dataset.train_x):
        yield dataset.task_id, int(identity), "train", x
    for identity, x in zip(dataset.query_ids, dataset.query_x):
        yield dataset.task_id, int(identity), "query", x
    for identity, x in zip(dataset.gallery_ids, dataset.gallery_x):
        yield dataset.task_id, int(identity), "gallery", x


def export_stream_csv(stream: list[TaskDataset], path: str) -> None:
    """Write every sample as one CSV row; floats keep full precision."""
    if not stream:
        raise ValueError("cannot export an empty stream")
    d_in = stream[0].train_x.shape[1]
    header = ["task_id", "identity_id", "split"] + [f"f{i}" for i in range(d_in)]
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for dataset in stream:
            for task_id, identity, split, x in _rows_of(dataset):
                writer.writerow([task_id, identity, split] + [repr(float(v)) for v in x])


def load_stream_csv(path: str) -> list[TaskDataset]:
    """Rebuild a stream from :func:`export_stream_csv` output, bit-exact."""
    rows: dict[int, dict[str, list[tuple[int, list[float]]]]] = {}
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["task_id", "identity_id", "split"]:
            raise ValueError(f"unrecognised stream CSV header in {path}")
        for line in reader:
            task_id, identity, split = int(line[0]), int(line[1]), line[2]
            if split not in ("train", "query", "gallery"):
                raise ValueError(f"unknown split {split!r} in {path}")
            values = [float(v) for v in line[3:]]
            rows.setdefault(task_id, {"train": [], "query": [], "gallery": []})
            rows[task_id][split].append((identity, values))
    stream = []
    for task_id in sorted(rows):
        parts = {}
        for split, entries in rows[task_id].items():
            if not entries:
                raise ValueError(f"task {task_id} has no {split} rows in {path}")
            parts[split] = (
                np.array([e[1] for e in entries], dtype=np.float64),
                np.array([e[0] for e in entries], dtype=np.int64),
            )
        stream.append(
            TaskDataset(
                task_id=task_id,
                train_x=parts["train"][0],
                train_y=parts["train"][1],
                query_x=parts["query"][0],
                query_ids=parts["query"][1],
                gallery_x=parts["gallery"][0],
                gallery_ids=parts["gallery"][1],
            )
        )
    return stream
