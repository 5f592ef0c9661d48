"""Working/memory model pair: MLP extractor plus an expanding classifier.

Both models share one architecture: a fully connected extractor mapping
inputs to an embedding, and a linear classifier whose column count grows
as tasks arrive.  There is deliberately no batch normalisation anywhere;
parameter-space consolidation averages two weight vectors directly, and
that average is only meaningful when the network is a pure function of
its weights.

The pair is consolidated between tasks by moving the working model toward
the memory model, ``w <- m + (w - m) / (t + 1)``, which equals the convex
combination ``w/(t+1) + m*t/(t+1)`` but is an exact fixed point when the
two parameter sets are identical.  Afterwards the memory model is
overwritten with a copy of the working model.
"""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor, TensorError, add, matmul, parameter, relu

Array = np.ndarray


class Extractor:
    """Affine layers with ReLU between them and a linear embedding head."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator) -> None:
        if len(widths) < 2:
            raise ValueError(f"extractor needs at least input and output widths, got {widths}")
        self.widths = tuple(int(w) for w in widths)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
            self.biases.append(parameter(np.zeros(fan_out)))

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_emb(self) -> int:
        return self.widths[-1]

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: Array) -> Tensor:
        h = Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if h.shape[1] != self.d_in:
            raise TensorError(f"extractor expects {self.d_in} input columns, got {h.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i != last:
                h = relu(h)
        return h

    def forward_np(self, x: Array) -> Array:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.d_in:
            raise TensorError(f"extractor expects {self.d_in} input columns, got {h.shape}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                h = np.where(h > 0.0, h, 0.0)
        return h


class Classifier:
    """Linear head over the embedding, one column per identity seen so far.

    Starts with zero classes; :meth:`expand` appends pre-drawn columns and
    records which contiguous class range belongs to which task.  Existing
    columns are never touched by an expansion.
    """

    def __init__(self, d_emb: int) -> None:
        self.d_emb = int(d_emb)
        self.weight = parameter(np.zeros((self.d_emb, 0)))
        self.bias = parameter(np.zeros(0))
        self.task_ranges: dict[int, tuple[int, int]] = {}

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def expand(self, task_id: int, new_weight: Array, new_bias: Array) -> None:
        task_id = int(task_id)
        if task_id in self.task_ranges:
            raise ValueError(f"task {task_id} already has a class range")
        if new_weight.ndim != 2 or new_weight.shape[0] != self.d_emb:
            raise ValueError(f"new columns must be ({self.d_emb}, n), got {new_weight.shape}")
        if new_bias.shape != (new_weight.shape[1],):
            raise ValueError(f"bias shape {new_bias.shape} does not match {new_weight.shape}")
        start = self.n_classes
        self.weight.data = np.concatenate([self.weight.data, new_weight], axis=1)
        self.bias.data = np.concatenate([self.bias.data, new_bias])
        self.task_ranges[task_id] = (start, self.n_classes)

    def range_for(self, task_id: int) -> tuple[int, int]:
        if task_id not in self.task_ranges:
            raise KeyError(f"no class range registered for task {task_id}")
        return self.task_ranges[task_id]

    def logits(self, emb: Tensor) -> Tensor:
        if self.n_classes == 0:
            raise TensorError("classifier has no classes yet; expand before use")
        return add(matmul(emb, self.weight), self.bias)

    def logits_np(self, emb: Array) -> Array:
        if self.n_classes == 0:
            raise TensorError("classifier has no classes yet; expand before use")
        return emb @ self.weight.data + self.bias.data

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class Model:
    """Extractor plus classifier; forwards return (embeddings, logits)."""

    def __init__(self, extractor: Extractor, classifier: Classifier) -> None:
        if extractor.d_emb != classifier.d_emb:
            raise ValueError(
                f"embedding widths disagree: {extractor.d_emb} vs {classifier.d_emb}"
            )
        self.extractor = extractor
        self.classifier = classifier

    def forward(self, x: Array) -> tuple[Tensor, Tensor]:
        emb = self.extractor.forward(x)
        return emb, self.classifier.logits(emb)

    def forward_np(self, x: Array) -> tuple[Array, Array]:
        emb = self.extractor.forward_np(x)
        return emb, self.classifier.logits_np(emb)

    def embed_np(self, x: Array) -> Array:
        return self.extractor.forward_np(x)

    def params(self) -> list[Tensor]:
        return self.extractor.params() + self.classifier.params()


def build_model(d_in: int, hidden: Sequence[int], d_emb: int, seed: int) -> Model:
    rng = np.random.default_rng(seed)
    extractor = Extractor((d_in, *hidden, d_emb), rng)
    return Model(extractor, Classifier(d_emb))


def clone_model(model: Model) -> Model:
    """Deep copy: fresh tensors with identical values, shared nothing."""
    extractor = Extractor.__new__(Extractor)
    extractor.widths = model.extractor.widths
    extractor.weights = [parameter(w.data.copy()) for w in model.extractor.weights]
    extractor.biases = [parameter(b.data.copy()) for b in model.extractor.biases]
    classifier = Classifier(model.classifier.d_emb)
    classifier.weight = parameter(model.classifier.weight.data.copy())
    classifier.bias = parameter(model.classifier.bias.data.copy())
    classifier.task_ranges = dict(model.classifier.task_ranges)
    return Model(extractor, classifier)


class ModelPair:
    """The plastic working model and its slowly updated memory twin."""

    def __init__(self, working: Model, memory: Model) -> None:
        self.working = working
        self.memory = memory

    @classmethod
    def create(cls, d_in: int, hidden: Sequence[int], d_emb: int, seed: int) -> "ModelPair":
        working = build_model(d_in, hidden, d_emb, seed)
        return cls(working, clone_model(working))

    def expand_classifier(self, task_id: int, n_new: int, seed: int) -> None:
        """Append ``n_new`` identically initialised columns to both models."""
        if n_new <= 0:
            raise ValueError(f"need a positive number of new classes, got {n_new}")
        d_emb = self.working.classifier.d_emb
        bound = 1.0 / np.sqrt(d_emb)
        rng = np.random.default_rng(seed)
        new_weight = rng.uniform(-bound, bound, size=(d_emb, n_new))
        new_bias = rng.uniform(-bound, bound, size=n_new)
        self.working.classifier.expand(task_id, new_weight.copy(), new_bias.copy())
        self.memory.classifier.expand(task_id, new_weight.copy(), new_bias.copy())


def sync_memory_to_working(pair: ModelPair) -> None:
    """Overwrite the memory model with a copy of the working model."""
    for wp, mp in zip(pair.working.params(), pair.memory.params()):
        mp.data = wp.data.copy()
    pair.memory.classifier.task_ranges = dict(pair.working.classifier.task_ranges)


def consolidate_model_space(pair: ModelPair, t: int) -> None:
    """Average the pair after task ``t``: working gets weight 1/(t+1).

    The memory model then becomes a copy of the consolidated working
    model, ready to act as the next task's teacher.
    """
    if int(t) != t or t < 1:
        raise ValueError(f"consolidation step index must be a positive integer, got {t!r}")
    wparams = pair.working.params()
    mparams = pair.memory.params()
    if len(wparams) != len(mparams):
        raise ValueError("model pair parameter lists diverged")
    inv = 1.0 / (t + 1.0)
    for wp, mp in zip(wparams, mparams):
        if wp.data.shape != mp.data.shape:
            raise ValueError(
                f"cannot consolidate mismatched shapes {wp.data.shape} vs {mp.data.shape}"
            )
        wp.data = mp.data + (wp.data - mp.data) * inv
    sync_memory_to_working(pair)


def fingerprint(params: Iterable[Tensor]) -> str:
    """SHA-256 over the exact bytes of every parameter, in order."""
    digest = hashlib.sha256()
    for p in params:
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def _array_to_hex(arr: Array) -> list[str]:
    return [float(v).hex() for v in arr.reshape(-1)]


def _array_from_hex(values: list[str], shape: Sequence[int]) -> Array:
    return np.array([float.fromhex(v) for v in values], dtype=np.float64).reshape(shape)


def _model_to_dict(model: Model) -> dict:
    return {
        "extractor": [
            {"w": _array_to_hex(w.data), "b": _array_to_hex(b.data)}
            for w, b in zip(model.extractor.weights, model.extractor.biases)
        ],
        "classifier": {
            "w": _array_to_hex(model.classifier.weight.data),
            "b": _array_to_hex(model.classifier.bias.data),
        },
    }


def _model_from_dict(payload: dict, widths: Sequence[int], n_classes: int,
                     task_ranges: dict[int, tuple[int, int]]) -> Model:
    extractor = Extractor.__new__(Extractor)
    extractor.widths = tuple(widths)
    extractor.weights = []
    extractor.biases = []
    for layer, (fan_in, fan_out) in zip(payload["extractor"], zip(widths[:-1], widths[1:])):
        extractor.weights.append(parameter(_array_from_hex(layer["w"], (fan_in, fan_out))))
        extractor.biases.append(parameter(_array_from_hex(layer["b"], (fan_out,))))
    classifier = Classifier(widths[-1])
    classifier.weight = parameter(_array_from_hex(payload["classifier"]["w"], (widths[-1], n_classes)))
    classifier.bias = parameter(_array_from_hex(payload["classifier"]["b"], (n_classes,)))
    classifier.task_ranges = dict(task_ranges)
    return Model(extractor, classifier)


def save_pair(pair: ModelPair, path: str) -> None:
    """Write both models to a text checkpoint that round-trips bitwise."""
    widths = pair.working.extractor.widths
    payload = {
        "format": "krkc-checkpoint-v1",
        "widths": list(widths),
        "n_classes": pair.working.classifier.n_classes,
        "task_ranges": {str(k): list(v) for k, v in sorted(pair.working.classifier.task_ranges.items())},
        "working": _model_to_dict(pair.working),
        "memory": _model_to_dict(pair.memory),
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_pair(path: str) -> ModelPair:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    if payload.get("format") != "krkc-checkpoint-v1":
        raise ValueError(f"unrecognised checkpoint format in {path}")
    widths = payload["widths"]
    n_classes = payload["n_classes"]
    ranges = {int(k): (int(v[0]), int(v[1])) for k, v in payload["task_ranges"].items()}
    working = _model_from_dict(payload["working"], widths, n_classes, ranges)
    memory = _model_from_dict(payload["memory"], widths, n_classes, ranges)
    return ModelPair(working, memory)
