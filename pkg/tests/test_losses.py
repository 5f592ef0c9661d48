"""Unit tests for cross-entropy, JS distillation and batch-hard triplets."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from krkc import losses as ls
from krkc import tensor as tc

LN2 = 0.6931471805599453


def test_cross_entropy_uniform_logits_is_log_c() -> None:
    logits = tc.constant(np.zeros((3, 4)))
    value = ls.cross_entropy(logits, [0, 1, 2]).item()
    assert value == pytest.approx(1.3862943611198906, abs=1e-12)


def test_cross_entropy_two_class_hand_value() -> None:
    # Independently derived: -log(e^2 / (e^2 + 1)) = log(1 + e^-2).
    value = ls.cross_entropy(tc.constant([[2.0, 0.0]]), [0]).item()
    assert value == pytest.approx(0.12692801104297263, abs=1e-12)


def test_cross_entropy_rejects_bad_labels() -> None:
    with pytest.raises(tc.TensorError):
        ls.cross_entropy(tc.constant(np.zeros((2, 3))), [0, 3])


def test_js_zero_for_identical_logits() -> None:
    logits = tc.constant([[1.0, -0.5, 2.0], [0.0, 0.1, -3.0]])
    assert ls.js_divergence(logits, logits, temperature=2.0).item() == 0.0


def test_js_opposite_one_hot_reaches_ln2() -> None:
    student = tc.constant([[40.0, -40.0]])
    teacher = tc.constant([[-40.0, 40.0]])
    value = ls.js_divergence(student, teacher, temperature=1.0).item()
    assert value == pytest.approx(LN2, abs=1e-8)


def test_js_hand_value_with_temperature() -> None:
    # Brute-force oracle: T=2 softens [1,0] vs [0,1], JS scaled by T^2 / N.
    value = ls.js_divergence(
        tc.constant([[1.0, 0.0]]), tc.constant([[0.0, 1.0]]), temperature=2.0
    ).item()
    assert value == pytest.approx(0.12119944792306375, abs=1e-12)


def test_js_teacher_gets_no_gradient() -> None:
    student = tc.parameter([[1.0, 0.0], [0.5, -0.5]])
    teacher = tc.parameter([[0.0, 1.0], [1.0, 1.0]])
    ls.js_divergence(student, teacher, temperature=2.0).backward()
    assert student.grad is not None
    assert teacher.grad is None


def test_js_value_is_symmetric_in_roles() -> None:
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(4, 6))
    one = ls.js_divergence(tc.constant(a), tc.constant(b), 2.0).item()
    two = ls.js_divergence(tc.constant(b), tc.constant(a), 2.0).item()
    assert one == pytest.approx(two, abs=1e-12)


@given(seed=st.integers(0, 10_000), t=st.floats(0.5, 4.0))
@settings(max_examples=60, deadline=None)
def test_js_bounds(seed: int, t: float) -> None:
    rng = np.random.default_rng(seed)
    s = tc.constant(rng.normal(scale=3.0, size=(3, 5)))
    q = tc.constant(rng.normal(scale=3.0, size=(3, 5)))
    value = ls.js_divergence(s, q, temperature=t).item()
    assert -1e-9 <= value <= t * t * LN2 + 1e-6


def test_batch_hard_mining_hand_case() -> None:
    emb = tc.constant([[0.0, 0.0], [2.0, 0.0], [2.5, 0.0], [4.0, 0.0]])
    ts = ls.batch_hard_triplets(emb, [0, 0, 1, 1])
    np.testing.assert_array_equal(ts.positives, [1, 0, 3, 2])
    np.testing.assert_array_equal(ts.negatives, [2, 2, 1, 1])
    np.testing.assert_allclose(ts.d_ap, [2.0, 2.0, 1.5, 1.5], atol=1e-12)
    np.testing.assert_allclose(ts.d_an, [2.5, 0.5, 0.5, 2.0], atol=1e-12)


def test_triplet_hand_value_active_hinges() -> None:
    # Brute-force oracle: hinges are (0, 1.8, 1.3, 0), mean 0.775.
    emb = tc.constant([[0.0, 0.0], [2.0, 0.0], [2.5, 0.0], [4.0, 0.0]])
    ts = ls.batch_hard_triplets(emb, [0, 0, 1, 1])
    assert ls.triplet_loss(ts, margin=0.3).item() == pytest.approx(0.775, abs=1e-12)


def test_triplet_zero_when_classes_are_far_apart() -> None:
    emb = tc.constant([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]])
    ts = ls.batch_hard_triplets(emb, [0, 0, 1, 1])
    assert ls.triplet_loss(ts, margin=0.3).item() == 0.0


def test_mining_rejects_singleton_label() -> None:
    emb = tc.constant(np.zeros((3, 2)))
    with pytest.raises(tc.TensorError, match="label 7 has a single sample"):
        ls.batch_hard_triplets(emb, [3, 3, 7])


def test_mining_rejects_single_class() -> None:
    emb = tc.constant(np.zeros((4, 2)))
    with pytest.raises(tc.TensorError, match="two distinct labels"):
        ls.batch_hard_triplets(emb, [1, 1, 1, 1])


def _brute_force_mining(emb: np.ndarray, labels: np.ndarray):
    d = np.sqrt(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1))
    pos, neg = [], []
    for i in range(len(labels)):
        best_p, best_d = -1, -1.0
        for j in range(len(labels)):
            if j != i and labels[j] == labels[i] and d[i, j] > best_d:
                best_p, best_d = j, d[i, j]
        worst_n, worst_d = -1, np.inf
        for j in range(len(labels)):
            if labels[j] != labels[i] and d[i, j] < worst_d:
                worst_n, worst_d = j, d[i, j]
        pos.append(best_p)
        neg.append(worst_n)
    return np.array(pos), np.array(neg)


@pytest.mark.parametrize("seed", range(25))
def test_mining_agrees_with_brute_force(seed: int) -> None:
    rng = np.random.default_rng(seed)
    n_ids = rng.integers(2, 5)
    labels = np.repeat(np.arange(n_ids), rng.integers(2, 4))
    emb = rng.normal(size=(labels.size, 3))
    ts = ls.batch_hard_triplets(tc.constant(emb), labels)
    pos, neg = _brute_force_mining(emb, labels)
    np.testing.assert_array_equal(ts.positives, pos)
    np.testing.assert_array_equal(ts.negatives, neg)


def test_rehearsal_breakdown_sums_to_total() -> None:
    rng = np.random.default_rng(1)
    logits_w = tc.constant(rng.normal(size=(8, 6)))
    logits_m = tc.constant(rng.normal(size=(8, 6)))
    emb = tc.constant(rng.normal(size=(8, 4)))
    ex_emb = tc.constant(rng.normal(size=(8, 4)))
    labels = np.repeat([0, 1, 2, 3], 2)
    ex_labels = np.repeat([4, 5, 0, 1], 2)
    out = ls.rehearsal_loss(logits_w, logits_m, emb, labels, ex_emb, ex_labels)
    parts = out.values()
    assert parts["total"] == pytest.approx(
        parts["distill"] + parts["ce"] + parts["trip"], abs=1e-12
    )


def test_exemplars_only_affect_the_triplet_term() -> None:
    rng = np.random.default_rng(2)
    logits_w = tc.constant(rng.normal(size=(6, 5)))
    logits_m = tc.constant(rng.normal(size=(6, 5)))
    emb = tc.constant(rng.normal(size=(6, 4)))
    ex_emb = tc.constant(rng.normal(size=(6, 4)))
    labels = np.repeat([0, 1, 2], 2)
    ex_labels = np.repeat([3, 4, 0], 2)
    with_ex = ls.rehearsal_loss(logits_w, logits_m, emb, labels, ex_emb, ex_labels)
    without = ls.rehearsal_loss(logits_w, logits_m, emb, labels)
    assert with_ex.ce.item() == without.ce.item()
    assert with_ex.distill.item() == without.distill.item()
    assert with_ex.trip.item() > without.trip.item() - 1e-12
    extra = ls.triplet_loss(ls.batch_hard_triplets(ex_emb, ex_labels), 0.3)
    assert with_ex.trip.item() == pytest.approx(without.trip.item() + extra.item(), abs=1e-12)


def test_first_task_form_has_no_distillation() -> None:
    rng = np.random.default_rng(3)
    logits = tc.constant(rng.normal(size=(4, 3)))
    emb = tc.constant(rng.normal(size=(4, 2)))
    out = ls.rehearsal_loss(logits, None, emb, [0, 0, 1, 1])
    assert out.distill is None
    assert out.total.item() == pytest.approx(out.ce.item() + out.trip.item(), abs=1e-12)


def test_refreshing_mirrors_rehearsal() -> None:
    rng = np.random.default_rng(4)
    logits_a = tc.constant(rng.normal(size=(6, 5)))
    logits_b = tc.constant(rng.normal(size=(6, 5)))
    emb = tc.constant(rng.normal(size=(6, 4)))
    labels = np.repeat([0, 1, 2], 2)
    reh = ls.rehearsal_loss(logits_a, logits_b, emb, labels)
    ref = ls.refreshing_loss(logits_a, logits_b, emb, labels)
    assert reh.total.item() == pytest.approx(ref.total.item(), abs=1e-15)


def test_rehearsal_gradient_never_reaches_teacher_params() -> None:
    rng = np.random.default_rng(5)
    logits_w = tc.parameter(rng.normal(size=(6, 5)))
    logits_m = tc.parameter(rng.normal(size=(6, 5)))
    emb = tc.parameter(rng.normal(size=(6, 4)))
    labels = np.repeat([0, 1, 2], 2)
    ls.rehearsal_loss(logits_w, logits_m, emb, labels).total.backward()
    assert logits_w.grad is not None
    assert emb.grad is not None
    assert logits_m.grad is None


def _kink_distance(ts: ls.TripletSet, margin: float) -> float:
    return float(np.min(np.abs(ts.d_ap - ts.d_an + margin)))


@pytest.mark.parametrize("seed", range(4))
def test_finite_difference_on_each_loss(seed: int) -> None:
    rng = np.random.default_rng(400 + seed)
    labels = np.repeat([0, 1, 2], 2)
    logits_w = tc.parameter(rng.normal(size=(6, 5)))
    logits_m = tc.parameter(rng.normal(size=(6, 5)))
    emb = tc.parameter(rng.normal(size=(6, 4)))
    ts = ls.batch_hard_triplets(emb, labels)
    assert _kink_distance(ts, 0.3) > 1e-3, "seed landed on a hinge kink, pick another"

    err_ce = tc.finite_difference_check(
        lambda: ls.cross_entropy(logits_w, labels), [logits_w]
    )
    err_js = tc.finite_difference_check(
        lambda: ls.js_divergence(logits_w, logits_m, 2.0), [logits_w]
    )
    err_trip = tc.finite_difference_check(
        lambda: ls.triplet_loss(ls.batch_hard_triplets(emb, labels), 0.3), [emb]
    )
    err_full = tc.finite_difference_check(
        lambda: ls.rehearsal_loss(logits_w, logits_m, emb, labels).total,
        [logits_w, emb],
    )
    for err in (err_ce, err_js, err_trip, err_full):
        assert err < 1e-6
