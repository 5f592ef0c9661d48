"""Strategy registry, baseline equivalences and cross-strategy behaviour.

The sweep-backed tests consume the session fixtures from conftest so the
five-seed comparison runs are shared with the acceptance suite instead of
being retrained per test.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from krkc import baselines as bl
from krkc import data as ds
from krkc import evaluation as ev
from krkc import models as md
from krkc import trainer as tr


def test_registry_flag_tuples():
    expected = {
        "naive": (False, False, "none", "none"),
        "frozen": (True, True, "frozen", "none"),
        "refresh": (True, True, "refreshing", "none"),
        "krkc": (True, True, "refreshing", "msc+fsc"),
    }
    assert set(bl.SEQUENTIAL_STRATEGIES) == set(expected)
    for name, flags in bl.SEQUENTIAL_STRATEGIES.items():
        assert flags.name == name
        assert (flags.use_exemplars, flags.use_distillation,
                flags.teacher_updates, flags.consolidation) == expected[name]
        flags.validate()
    assert bl.STRATEGY_NAMES == ("naive", "frozen", "refresh", "krkc", "joint")


def test_consolidation_properties_only_fire_for_krkc():
    for name, flags in bl.SEQUENTIAL_STRATEGIES.items():
        assert flags.fuses_features == (name == "krkc")
        assert flags.averages_parameters == (name == "krkc")


def test_strategy_from_name_round_trips_and_rejects_joint():
    for name in bl.SEQUENTIAL_STRATEGIES:
        assert bl.strategy_from_name(name) is bl.SEQUENTIAL_STRATEGIES[name]
    with pytest.raises(ValueError, match="joint"):
        bl.strategy_from_name("joint")
    with pytest.raises(ValueError, match="unknown strategy"):
        bl.strategy_from_name("ewc")


def test_frozen_teacher_is_refreshing_with_zero_rate_bitwise():
    """A refresh rate of exactly zero must reproduce the frozen teacher.

    The per-batch RNG draws happen before the teacher branch and an Adam
    step at learning rate zero leaves parameters byte-identical, so the
    two runs must agree bitwise on both models and on every score.
    """
    stream = ds.generate_stream(ds.StreamConfig(
        n_tasks=2, ids_per_task=8, samples_per_id=8, test_ids_per_task=4,
        d_in=16, seed=11))
    cfg = dataclasses.replace(tr.TrainConfig(), e_max=3, hidden=(16,),
                              d_emb=8, p_ids=4, k_instances=2)
    cfg_zero = dataclasses.replace(cfg, eta_subsequent=0.0, eta_last=0.0)
    frozen = tr.run_sequence(stream, cfg, bl.SEQUENTIAL_STRATEGIES["frozen"],
                             seed=7, compute_references=False)
    zeroed = tr.run_sequence(stream, cfg_zero,
                             bl.SEQUENTIAL_STRATEGIES["refresh"],
                             seed=7, compute_references=False)
    assert md.fingerprint(frozen.pair.working.params()) == \
        md.fingerprint(zeroed.pair.working.params())
    assert md.fingerprint(frozen.pair.memory.params()) == \
        md.fingerprint(zeroed.pair.memory.params())
    assert frozen.map_matrix == zeroed.map_matrix
    assert frozen.rank1_matrix == zeroed.rank1_matrix


def test_memory_cross_entropy_net_drop_on_every_new_task(default_sweep):
    """Refreshing must cut the memory model's CE from first to last epoch.

    Checked per task position and per seed: the epoch-mean cross entropy
    of the memory model ends below where it started on every task that
    refreshes it.
    """
    runs = default_sweep["results"]["krkc"]
    checked = 0
    for seed, result in runs.items():
        for position in (2, 3, 4):
            ce = [row["ce"] for row in result.epoch_rows
                  if row["model"] == "memory" and row["position"] == position]
            assert len(ce) == tr.TrainConfig().e_max
            drop = ce[0] - ce[-1]
            assert drop > 0.0, (
                f"memory CE rose on seed {seed} position {position}: "
                f"first={ce[0]:.4f} last={ce[-1]:.4f}"
            )
            checked += 1
    assert checked == 15


def test_joint_training_upper_bounds_every_sequential_strategy(
        default_sweep, joint_runs):
    """Pooled training with the same budget should dominate the stream.

    Compares the median average incremental Rank-1 of the joint run
    against each sequential strategy across the sweep seeds.
    """
    seeds = default_sweep["seeds"]
    joint_med = float(np.median(
        [joint_runs[s]["avg_incremental_rank1"] for s in seeds]))
    seq_med = {
        name: float(np.median([
            ev.average_incremental_accuracy(runs[s].rank1_matrix)
            for s in seeds
        ]))
        for name, runs in default_sweep["results"].items()
    }
    losers = {n: m for n, m in seq_med.items() if joint_med < m}
    assert not losers, (
        f"joint median Rank-1 {joint_med:.4f} is below sequential "
        f"strategies {losers} (all medians: {seq_med})"
    )
