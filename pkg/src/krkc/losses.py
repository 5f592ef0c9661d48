"""Training losses for the working/memory pair.

Three ingredients, combined two ways:

* identity cross-entropy on the new task's batch;
* a symmetric Jensen-Shannon divergence between the student's and the
  (gradient-stopped) teacher's temperature-softened class distributions,
  scaled by ``T^2 / N``;
* batch-hard triplet losses, one mined inside the new batch and one mined
  inside the exemplar batch.

The rehearsal loss treats the working model as student and the memory
model as teacher; the refreshing loss swaps the roles.  Both models see
cross-entropy and triplets only through their own forward passes, so one
optimiser step never sends gradient into the other model.

Exemplar samples appear only in their triplet term: they anchor the
embedding geometry of past identities without re-training their
classifier columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .tensor import Tensor, TensorError

Array = np.ndarray

LOG_EPS = 1e-12


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true class per row."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or y.ndim != 1 or y.shape[0] != logits.shape[0]:
        raise TensorError(
            f"cross_entropy: got logits {logits.shape} and labels {y.shape}"
        )
    log_probs = tc.log_softmax_rows(logits)
    return tc.scale(tc.mean_all(tc.pick_rows(log_probs, y)), -1.0)


def js_divergence(student_logits: Tensor, teacher_logits: Tensor,
                  temperature: float) -> Tensor:
    """Batch-mean Jensen-Shannon divergence between softened predictions.

    Both logit matrices are divided by ``temperature`` before the softmax
    and the result is multiplied by ``temperature**2``, keeping gradient
    magnitudes comparable across temperatures.  The teacher side is
    detached, so only the student receives gradient.  Always in
    ``[0, ln 2]`` up to the ``1e-12`` smoothing inside the logarithms.
    """
    if student_logits.shape != teacher_logits.shape or student_logits.ndim != 2:
        raise TensorError(
            "js_divergence: logit shapes must match and be 2-D, got "
            f"{student_logits.shape} and {teacher_logits.shape}"
        )
    n = student_logits.shape[0]
    if n == 0:
        raise TensorError("js_divergence: empty batch")
    p = tc.softmax_rows(student_logits, temperature)
    q = tc.softmax_rows(tc.stop_gradient(teacher_logits), temperature)
    m = tc.scale(tc.add(p, q), 0.5)
    log_m = tc.log(tc.add_scalar(m, LOG_EPS))
    kl_pm = tc.sum_all(tc.mul(p, tc.sub(tc.log(tc.add_scalar(p, LOG_EPS)), log_m)))
    kl_qm = tc.sum_all(tc.mul(q, tc.sub(tc.log(tc.add_scalar(q, LOG_EPS)), log_m)))
    js_total = tc.scale(tc.add(kl_pm, kl_qm), 0.5)
    return tc.scale(js_total, float(temperature) ** 2 / n)


@dataclass
class TripletSet:
    """Hardest positive/negative per anchor, mined from one batch.

    Indices point into the rows of ``embeddings``; ``d_ap`` and ``d_an``
    are the Euclidean distances at mining time, kept for inspection and
    for steering test cases away from the hinge kink.
    """

    embeddings: Tensor
    anchors: Array
    positives: Array
    negatives: Array
    d_ap: Array
    d_an: Array


def batch_hard_triplets(embeddings: Tensor, labels) -> TripletSet:
    """Pick, per anchor, its farthest same-label and nearest other-label row.

    Ties break toward the lowest index.  Every label must appear at least
    twice and at least two labels must be present, otherwise some anchor
    has no valid positive or negative and mining fails loudly.
    """
    y = np.asarray(labels, dtype=np.int64)
    if embeddings.ndim != 2 or y.ndim != 1 or y.shape[0] != embeddings.shape[0]:
        raise TensorError(
            f"batch_hard_triplets: embeddings {embeddings.shape} vs labels {y.shape}"
        )
    n = y.shape[0]
    uniques, counts = np.unique(y, return_counts=True)
    if uniques.size < 2:
        raise TensorError("batch_hard_triplets: need at least two distinct labels")
    lonely = uniques[counts < 2]
    if lonely.size:
        raise TensorError(
            f"batch_hard_triplets: label {int(lonely[0])} has a single sample, no positive exists"
        )
    sq = tc.pairwise_sqdist(tc.stop_gradient(embeddings)).data
    dist = np.sqrt(sq)
    same = y[:, None] == y[None, :]
    eye = np.eye(n, dtype=bool)
    pos_cand = np.where(same & ~eye, dist, -np.inf)
    neg_cand = np.where(~same, dist, np.inf)
    positives = pos_cand.argmax(axis=1)
    negatives = neg_cand.argmin(axis=1)
    anchors = np.arange(n)
    return TripletSet(
        embeddings=embeddings,
        anchors=anchors,
        positives=positives,
        negatives=negatives,
        d_ap=dist[anchors, positives],
        d_an=dist[anchors, negatives],
    )


def triplet_loss(triplets: TripletSet, margin: float) -> Tensor:
    """Mean hinge ``max(0, d_ap - d_an + margin)`` over the anchors.

    Distances are recomputed through the graph so gradient reaches the
    embeddings; the hinge contributes zero gradient exactly at its kink.
    """
    if margin < 0.0:
        raise TensorError(f"triplet_loss: margin must be non-negative, got {margin}")
    sq = tc.pairwise_sqdist(triplets.embeddings)
    d_ap = tc.sqrt(tc.clamp_min(tc.gather_pairs(sq, triplets.anchors, triplets.positives), 1e-12))
    d_an = tc.sqrt(tc.clamp_min(tc.gather_pairs(sq, triplets.anchors, triplets.negatives), 1e-12))
    hinge = tc.relu(tc.add_scalar(tc.sub(d_ap, d_an), float(margin)))
    return tc.mean_all(hinge)


@dataclass
class LossBreakdown:
    """A composite loss with its parts still attached to the graph.

    ``distill`` is ``None`` when distillation is disabled (first task,
    plain fine-tuning); ``total`` is always the sum of the present parts.
    """

    distill: Tensor | None
    ce: Tensor
    trip: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "distill": 0.0 if self.distill is None else self.distill.item(),
            "ce": self.ce.item(),
            "trip": self.trip.item(),
            "total": self.total.item(),
        }


def _composite(
    student_logits: Tensor,
    teacher_logits: Tensor | None,
    student_emb_new: Tensor,
    new_labels,
    student_emb_exemplar: Tensor | None,
    exemplar_labels,
    temperature: float,
    margin: float,
    distill_logits: Tensor | None,
) -> LossBreakdown:
    ce = cross_entropy(student_logits, new_labels)
    trip = triplet_loss(batch_hard_triplets(student_emb_new, new_labels), margin)
    if student_emb_exemplar is not None:
        if exemplar_labels is None:
            raise TensorError("exemplar embeddings given without exemplar labels")
        trip = tc.add(
            trip, triplet_loss(batch_hard_triplets(student_emb_exemplar, exemplar_labels), margin)
        )
    distill: Tensor | None = None
    total = tc.add(ce, trip)
    if teacher_logits is not None:
        student_side = student_logits if distill_logits is None else distill_logits
        distill = js_divergence(student_side, teacher_logits, temperature)
        total = tc.add(distill, total)
    elif distill_logits is not None:
        raise TensorError("distill_logits given without teacher logits")
    return LossBreakdown(distill=distill, ce=ce, trip=trip, total=total)


def rehearsal_loss(
    working_logits: Tensor,
    memory_logits: Tensor | None,
    working_emb_new: Tensor,
    new_labels,
    working_emb_exemplar: Tensor | None = None,
    exemplar_labels=None,
    temperature: float = 2.0,
    margin: float = 0.3,
    distill_logits: Tensor | None = None,
) -> LossBreakdown:
    """Working-model loss on a new batch, with the memory model as teacher.

    Passing ``memory_logits=None`` drops the distillation term and
    ``working_emb_exemplar=None`` drops the exemplar triplet term; with
    both absent this is plain supervised fine-tuning, which is exactly
    what the first task and the naive baseline use.  ``distill_logits``
    optionally replaces the student side of the divergence, for runs
    that distil only the columns of previously seen classes while
    cross-entropy still sees every column.
    """
    return _composite(
        working_logits, memory_logits, working_emb_new, new_labels,
        working_emb_exemplar, exemplar_labels, temperature, margin, distill_logits,
    )


def refreshing_loss(
    memory_logits: Tensor,
    working_logits: Tensor,
    memory_emb_new: Tensor,
    new_labels,
    memory_emb_exemplar: Tensor | None = None,
    exemplar_labels=None,
    temperature: float = 2.0,
    margin: float = 0.3,
    distill_logits: Tensor | None = None,
) -> LossBreakdown:
    """Memory-model loss, mirroring rehearsal with the roles swapped.

    The working model's fresh predictions act as the (detached) teacher,
    pulling the memory model toward the new task at its own slow pace.
    """
    return _composite(
        memory_logits, working_logits, memory_emb_new, new_labels,
        memory_emb_exemplar, exemplar_labels, temperature, margin, distill_logits,
    )
