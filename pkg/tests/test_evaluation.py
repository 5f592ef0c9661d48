"""Unit tests for retrieval scoring, matrix statistics and serialisation."""

from __future__ import annotations

import json

import numpy as np
import pytest

from krkc import data as ds
from krkc import evaluation as ev
from krkc import models as md
from krkc import tensor as tc


def test_ap_hand_example_matches_at_ranks_one_and_three() -> None:
    # AP = (1/1 + 2/3) / 2 = 5/6.
    query_f = np.array([[0.0]])
    gallery_f = np.array([[0.1], [0.2], [0.3], [0.4], [0.5]])
    result = ev.retrieve_and_score(
        query_f, gallery_f, np.array([1]), np.array([1, 2, 1, 3, 4])
    )
    assert result.mean_ap == pytest.approx(5.0 / 6.0, abs=1e-12)
    assert result.rank1 == 1.0


def test_ap_hand_example_matches_at_ranks_two_and_four() -> None:
    # AP = (1/2 + 2/4) / 2 = 0.5, and the first hit sits at rank 2.
    query_f = np.array([[0.0]])
    gallery_f = np.array([[0.1], [0.2], [0.3], [0.4], [0.5]])
    result = ev.retrieve_and_score(
        query_f, gallery_f, np.array([1]), np.array([2, 1, 3, 1, 4])
    )
    assert result.mean_ap == pytest.approx(0.5, abs=1e-12)
    assert result.rank1 == 0.0
    assert result.cmc[1] == 1.0


def test_cmc_is_monotone_and_ends_at_one() -> None:
    rng = np.random.default_rng(0)
    qf = rng.normal(size=(6, 4))
    gf = rng.normal(size=(12, 4))
    qid = np.array([0, 1, 2, 3, 4, 5])
    gid = np.array([0, 1, 2, 3, 4, 5] * 2)
    result = ev.retrieve_and_score(qf, gf, qid, gid)
    assert (np.diff(result.cmc) >= -1e-15).all()
    assert result.cmc[-1] == 1.0
    assert 0.0 <= result.mean_ap <= 1.0


def test_query_without_gallery_match_is_an_error() -> None:
    with pytest.raises(tc.TensorError, match=r"\[9\] have no gallery"):
        ev.retrieve_and_score(
            np.zeros((1, 2)), np.zeros((2, 2)), np.array([9]), np.array([1, 2])
        )


def test_distance_ties_rank_earlier_gallery_rows_first() -> None:
    # Both gallery rows sit at the same distance; the earlier one is the
    # match, so AP must treat it as rank 1 deterministically.
    result = ev.retrieve_and_score(
        np.array([[0.0]]), np.array([[1.0], [-1.0]]), np.array([5]), np.array([5, 6])
    )
    assert result.mean_ap == 1.0


def test_perfect_separability_gives_exact_ones() -> None:
    stream = ds.generate_stream(
        ds.StreamConfig(
            n_tasks=1, ids_per_task=4, samples_per_id=4, test_ids_per_task=6,
            query_per_test_id=2, gallery_per_test_id=3, d_in=12, latent_dim=4,
            domain_shift=0.5, noise_scale=0.0, seed=3,
        )
    )
    model = md.build_model(d_in=12, hidden=(8,), d_emb=6, seed=1)
    task = stream[0]
    result = ev.retrieve_and_score(
        ev.extract_features(model, task.query_x),
        ev.extract_features(model, task.gallery_x),
        task.query_ids,
        task.gallery_ids,
    )
    assert result.mean_ap == 1.0
    assert result.rank1 == 1.0


def test_feature_extraction_is_normalised_and_pure() -> None:
    pair = md.ModelPair.create(d_in=6, hidden=(5,), d_emb=4, seed=2)
    pair.expand_classifier(1, 3, seed=0)
    before = md.fingerprint(pair.working.params() + pair.memory.params())
    x = np.random.default_rng(1).normal(size=(9, 6))
    feats = ev.extract_features(pair.working, x)
    fused = ev.fused_features(pair, x)
    after = md.fingerprint(pair.working.params() + pair.memory.params())
    assert before == after
    np.testing.assert_allclose((feats**2).sum(axis=1), 1.0, atol=1e-12)
    assert fused.shape == (9, 8)
    np.testing.assert_allclose((fused**2).sum(axis=1), 2.0, atol=1e-12)


def test_matrix_statistics_hand_cases() -> None:
    two = [[0.8], [0.6, 0.9]]
    assert ev.backward_transfer(two, "paper") == pytest.approx(0.0, abs=1e-15)
    assert ev.backward_transfer(two, "final_row") == pytest.approx(-0.2, abs=1e-12)

    three = [[0.9], [0.7, 0.8], [0.5, 0.6, 0.85]]
    assert ev.average_incremental_accuracy(three) == pytest.approx(0.65, abs=1e-12)
    assert ev.backward_transfer(three, "paper") == pytest.approx(-0.05, abs=1e-12)
    assert ev.backward_transfer(three, "final_row") == pytest.approx(-0.3, abs=1e-12)
    assert ev.forward_transfer(three, [0.6, 0.75, 0.8]) == pytest.approx(0.05, abs=1e-12)


def test_matrix_validation() -> None:
    with pytest.raises(ValueError, match="row 2 has 1 entries"):
        ev.average_incremental_accuracy([[0.5], [0.4]])
    with pytest.raises(ValueError, match="at least two tasks"):
        ev.backward_transfer([[0.5]], "paper")
    with pytest.raises(ValueError, match="unknown backward transfer mode"):
        ev.backward_transfer([[0.5], [0.4, 0.6]], "averaged")
    with pytest.raises(ValueError, match="one reference score per task"):
        ev.forward_transfer([[0.5], [0.4, 0.6]], [0.1])


def test_canonical_json_is_deterministic_and_parseable() -> None:
    payload = {"b": [1.0 / 3.0, 2], "a": {"nested": 0.1}, "s": "text", "n": None}
    text_one = ev.canonical_json(payload)
    text_two = ev.canonical_json(json.loads(json.dumps(payload)))
    assert text_one == text_two
    parsed = json.loads(text_one)
    assert parsed["b"][0] == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert text_one.index('"a"') < text_one.index('"b"') < text_one.index('"s"')


def test_canonical_json_rejects_non_finite() -> None:
    with pytest.raises(ValueError, match="non-finite"):
        ev.canonical_json({"x": float("nan")})


def test_accuracy_matrix_csv_round_trip(tmp_path) -> None:
    map_m = [[0.9], [0.7, 0.8], [0.5, 1.0 / 3.0, 0.85]]
    r1_m = [[1.0], [0.6, 0.75], [0.4, 0.5, 0.9]]
    path = tmp_path / "matrix.csv"
    ev.write_accuracy_matrix_csv(map_m, r1_m, str(path))
    got_map, got_r1 = ev.read_accuracy_matrix_csv(str(path))
    np.testing.assert_allclose(
        np.concatenate([np.array(r) for r in got_map]),
        np.concatenate([np.array(r) for r in map_m]),
        rtol=1e-12,
    )
    np.testing.assert_allclose(
        np.concatenate([np.array(r) for r in got_r1]),
        np.concatenate([np.array(r) for r in r1_m]),
        rtol=1e-12,
    )


def test_accuracy_matrix_csv_detects_missing_entries(tmp_path) -> None:
    path = tmp_path / "broken.csv"
    path.write_text("step,task,map,rank1\n2,1,0.5,0.5\n2,2,0.5,0.5\n")
    with pytest.raises(ValueError, match=r"missing entry \(1, 1\)"):
        ev.read_accuracy_matrix_csv(str(path))
