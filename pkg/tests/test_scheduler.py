import itertools
import math
from collections import Counter

import pytest

from medforge.records import Stage
from medforge.rng import SplitMix64
from medforge.scheduler import (
    PoolEntry,
    SamplingPool,
    ScheduleConfig,
    build_pool,
    draw_all,
    emit_schedule,
    expected_stage_curve,
    pool_from_counts,
    sample_next,
)

from conftest import make_instruction, make_pretrain


def corpus(n_pt: int, n_sft: int):
    pt = [make_pretrain(f"pt-{i}", f"text {i}") for i in range(n_pt)]
    sft = [make_instruction(f"sft-{i}", f"q{i}", f"a{i}") for i in range(n_sft)]
    return pt, sft


def test_build_pool_multiplicities_and_weight():
    pt, sft = corpus(10, 10)
    pool = build_pool(pt, sft, ScheduleConfig())
    assert len(pool) == 10 + 20  # sft epochs default to 2
    assert pool.total_weight == pytest.approx(16 * 10 + 2 * 20)


def test_build_pool_single_pt_record():
    pt, sft = corpus(1, 0)
    pool = build_pool(pt, sft, ScheduleConfig())
    assert len(pool) == 1
    assert pool.total_weight == pytest.approx(16.0)


def test_build_pool_pt_epochs_multiply():
    pt, sft = corpus(5, 0)
    pool = build_pool(pt, sft, ScheduleConfig(pt_epochs=2))
    assert len(pool) == 10


def test_build_pool_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        build_pool([], [], ScheduleConfig())


def test_single_instance_drawn_with_certainty():
    pool = SamplingPool([PoolEntry("only", Stage.PRETRAIN, 16.0)])
    entry = sample_next(pool, SplitMix64(1))
    assert entry.item_id == "only"
    with pytest.raises(ValueError, match="exhausted"):
        sample_next(pool, SplitMix64(2))


def test_first_draw_two_outcome_distribution():
    # one PT (16) vs one SFT (2): P(PT first) = 16/18, by direct enumeration
    expected = 16 / 18
    hits = 0
    trials = 100_000
    for seed in range(trials):
        pool = SamplingPool(
            [PoolEntry("pt", Stage.PRETRAIN, 16.0), PoolEntry("sft", Stage.INSTRUCTION, 2.0)]
        )
        entry = sample_next(pool, SplitMix64(seed))
        hits += entry.stage is Stage.PRETRAIN
    assert hits / trials == pytest.approx(expected, abs=0.01)


def test_equal_priorities_give_uniform_permutations():
    # 3 items, 60k trials; chi-square over the 6 permutations, p > 0.001
    trials = 60_000
    counts = Counter()
    for seed in range(trials):
        pool = SamplingPool([PoolEntry(str(i), Stage.PRETRAIN, 1.0) for i in range(3)])
        order = tuple(e.item_id for e in draw_all(pool, SplitMix64(seed)))
        counts[order] += 1
    assert set(counts) == set(itertools.permutations("012"))
    expected = trials / 6
    chi2 = sum((obs - expected) ** 2 / expected for obs in counts.values())
    # inverse chi-square CDF at 0.999 with 5 degrees of freedom
    assert chi2 < 20.515


def test_draw_probability_tracks_remaining_mass():
    # after the PT item is gone, the two SFT items are 50/50
    outcomes = Counter()
    for seed in range(20_000):
        pool = SamplingPool(
            [
                PoolEntry("pt", Stage.PRETRAIN, 16.0),
                PoolEntry("s1", Stage.INSTRUCTION, 2.0),
                PoolEntry("s2", Stage.INSTRUCTION, 2.0),
            ]
        )
        rng = SplitMix64(seed)
        order = [e.item_id for e in draw_all(pool, rng)]
        outcomes[order[0] == "pt"] += 1
        if order[0] == "pt":
            outcomes[("second", order[1])] += 1
    p_pt_first = outcomes[True] / 20_000
    assert p_pt_first == pytest.approx(16 / 20, abs=0.01)
    second_total = outcomes[("second", "s1")] + outcomes[("second", "s2")]
    assert outcomes[("second", "s1")] / second_total == pytest.approx(0.5, abs=0.02)


def test_weight_bookkeeping_matches_recomputation():
    pt, sft = corpus(20, 15)
    pool = build_pool(pt, sft, ScheduleConfig())
    rng = SplitMix64(9)
    while pool.remaining:
        sample_next(pool, rng)
        assert pool.total_weight == pytest.approx(pool.recomputed_weight(), abs=1e-9)
    assert pool.total_weight == pytest.approx(0.0, abs=1e-9)


def test_schedule_batching_single_short_batch():
    pt, sft = corpus(10, 10)
    cfg = ScheduleConfig(seed=4)
    batches = emit_schedule(build_pool(pt, sft, cfg), cfg)
    assert [len(b) for b in batches] == [30]


def test_schedule_batching_shapes():
    pt, sft = corpus(10, 10)
    cfg = ScheduleConfig(seed=4, batch_size=8)
    batches = emit_schedule(build_pool(pt, sft, cfg), cfg)
    assert [len(b) for b in batches] == [8, 8, 8, 6]


def test_schedule_is_permutation_of_pool():
    pt, sft = corpus(13, 7)
    cfg = ScheduleConfig(seed=11, batch_size=4)
    pool = build_pool(pt, sft, cfg)
    expected = Counter(e.item_id for e in pool.entries)
    batches = emit_schedule(pool, cfg)
    assert Counter(i for b in batches for i in b) == expected


def test_schedule_deterministic_per_seed():
    pt, sft = corpus(12, 12)
    cfg = ScheduleConfig(seed=77, batch_size=5)
    first = emit_schedule(build_pool(pt, sft, cfg), cfg)
    second = emit_schedule(build_pool(pt, sft, cfg), cfg)
    assert first == second
    other = emit_schedule(build_pool(pt, sft, ScheduleConfig(seed=78, batch_size=5)),
                          ScheduleConfig(seed=78, batch_size=5))
    assert other != first
    assert Counter(i for b in other for i in b) == Counter(i for b in first for i in b)


def test_stage_curve_decreasing_with_default_priorities():
    cfg = ScheduleConfig(seed=3)
    curve = expected_stage_curve(cfg, (100, 100), runs=1000)
    assert len(curve) == 10
    assert curve[0] > curve[-1]


def test_stage_curve_flat_for_equal_priorities():
    cfg = ScheduleConfig(pt_priority=2.0, sft_priority=2.0, sft_epochs=1, seed=3)
    curve = expected_stage_curve(cfg, (100, 100), runs=1000)
    for density in curve:
        assert density == pytest.approx(0.5, abs=0.03)


def test_stage_curve_all_pt_is_one():
    cfg = ScheduleConfig(seed=3)
    curve = expected_stage_curve(cfg, (50, 0), runs=50)
    assert curve == [1.0] * 10


def test_config_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(pt_priority=0)
    with pytest.raises(ValueError):
        ScheduleConfig(batch_size=0)
    with pytest.raises(ValueError):
        ScheduleConfig(sft_epochs=0)


def test_pool_from_counts_matches_build_pool():
    cfg = ScheduleConfig()
    pool = pool_from_counts(4, 3, cfg)
    assert len(pool) == 4 + 6
    assert pool.total_weight == pytest.approx(16 * 4 + 2 * 6)
