import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphamine.fitness import (
    METRICS,
    Classification,
    FitnessError,
    FitnessReport,
    MetricSeries,
    ThresholdConfig,
    classify,
    classify_cohort,
    compute_fitness,
    ic,
    icir,
    mutual_info,
    rank_ic,
    rank_icir,
)

import oracles


def report(**kw):
    base = dict(ic=0.05, icir=0.5, rank_ic=0.05, rank_icir=0.5, mi=0.1)
    base.update(kw)
    return FitnessReport(**base)


def series(*values):
    return MetricSeries.from_values([str(i) for i in range(len(values))], values)


class TestIc:
    def test_perfect(self):
        x = np.random.default_rng(0).standard_normal((5, 6))
        assert ic(x, x).mean == pytest.approx(1.0, abs=1e-12)

    def test_two_date_hand(self):
        f = np.array([[1, 2, 3], [1, 2, 3]], dtype=float)
        r = np.array([[2, 4, 6], [3, 2, 1]], dtype=float)
        s = ic(f, r)
        assert s.values.tolist() == pytest.approx([1.0, -1.0], abs=1e-12)
        assert s.mean == pytest.approx(0.0, abs=1e-12)

    def test_constant_dates_skipped(self):
        f = np.array([[5, 5, 5], [1, 2, 3]], dtype=float)
        r = np.array([[1, 2, 3], [1, 2, 4]], dtype=float)
        assert ic(f, r).valid_dates == 1

    def test_too_few_pairs_skipped(self):
        f = np.array([[1, 2, np.nan], [1, 2, 3]], dtype=float)
        r = np.array([[1, 2, 3], [3, 2, 1]], dtype=float)
        s = ic(f, r)
        assert s.valid_dates == 1 and s.mean == pytest.approx(-1.0)

    def test_no_valid_dates(self):
        with pytest.raises(FitnessError):
            ic(np.ones((2, 3)), np.ones((2, 3)))

    def test_axis_mismatch(self):
        with pytest.raises(FitnessError):
            ic(np.ones((2, 3)), np.ones((3, 3)))


class TestRankIc:
    def test_monotone_transform(self):
        f = np.random.default_rng(1).standard_normal((4, 7))
        assert rank_ic(f, np.exp(f)).mean == pytest.approx(1.0, abs=1e-12)

    def test_reversed(self):
        assert rank_ic(np.array([[1.0, 2, 3]]), np.array([[9.0, 4, 1]])).mean == pytest.approx(-1.0)

    def test_ties(self):
        value = rank_ic(np.array([[1.0, 1, 2]]), np.array([[1.0, 2, 3]])).mean
        # ranks (1.5, 1.5, 3) against (1, 2, 3)
        assert value == pytest.approx(oracles.pearson([1.5, 1.5, 3], [1, 2, 3]), abs=1e-12)
        assert value == pytest.approx(math.sqrt(3) / 2, abs=1e-12)


class TestIcir:
    def test_zero_std(self):
        with pytest.raises(FitnessError):
            icir(series(0.1, 0.1, 0.1))

    def test_hand(self):
        assert icir(series(0.2, 0.0)) == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_negation(self):
        a = series(0.3, -0.1, 0.2)
        b = series(-0.3, 0.1, -0.2)
        assert icir(b) == pytest.approx(-icir(a), abs=1e-15)

    def test_rank_icir_hand(self):
        assert rank_icir(series(0.3, 0.1)) == pytest.approx(math.sqrt(2), abs=1e-9)

    def test_single_date(self):
        with pytest.raises(FitnessError):
            rank_icir(series(0.3))


class TestMutualInfo:
    def test_identity_is_log2_bins(self):
        x = np.random.default_rng(2).permutation(10_000).astype(float).reshape(100, 100)
        assert mutual_info(x, x, 16) == pytest.approx(4.0, abs=1e-9)

    def test_independent_small(self):
        rng = np.random.default_rng(3)
        assert mutual_info(rng.uniform(size=(100, 100)), rng.uniform(size=(100, 100)), 16) <= 0.05

    def test_insufficient_pairs(self):
        with pytest.raises(FitnessError):
            mutual_info(np.ones((10, 25)), np.ones((10, 25)), 16)

    def test_bins_lower_bound(self):
        with pytest.raises(FitnessError):
            mutual_info(np.ones((4, 4)), np.ones((4, 4)), 1)

    def test_nonnegative_and_ties_stable(self):
        x = np.repeat(np.arange(10.0), 100).reshape(20, 50)
        assert mutual_info(x, x[::-1].copy(), 4) >= 0.0


class TestClassify:
    def test_single_member_elite(self):
        r = report()
        assert classify(r, [r], ThresholdConfig()) is Classification.ELITE

    def test_seventieth_percentile_is_qualified(self):
        cohort = [report(**{m: 0.1 + 0.01 * i for m in METRICS}) for i in range(100)]
        assert classify(cohort[70], cohort, ThresholdConfig()) is Classification.QUALIFIED
        assert classify(cohort[85], cohort, ThresholdConfig()) is Classification.ELITE
        assert classify(cohort[60], cohort, ThresholdConfig()) is Classification.NONE

    def test_mi_floor(self):
        r = report(mi=0.01, ic=1.0, icir=10.0, rank_ic=1.0, rank_icir=10.0)
        assert classify(r, [r], ThresholdConfig()) is Classification.NONE

    def test_between_floors_is_qualified(self):
        r = report(ic=0.007)
        assert classify(r, [r], ThresholdConfig()) is Classification.QUALIFIED

    def test_empty_cohort(self):
        with pytest.raises(FitnessError):
            classify(report(), [], ThresholdConfig())

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            ThresholdConfig(qualified_percentile=80, elite_percentile=65)
        with pytest.raises(ValueError):
            ThresholdConfig(elite_floors={m: 0.0 for m in METRICS})

    @given(st.randoms(use_true_random=False), st.integers(1, 30))
    @settings(max_examples=100)
    def test_reorder_invariance(self, rnd, n):
        cohort = [report(**{m: rnd.uniform(-0.1, 0.3) for m in METRICS}) for _ in range(n)]
        labels = [r.classification for r in classify_cohort(cohort, ThresholdConfig())]
        perm = list(range(n))
        rnd.shuffle(perm)
        shuffled = classify_cohort([cohort[i] for i in perm], ThresholdConfig())
        assert [r.classification for r in shuffled] == [labels[i] for i in perm]


class TestProperties:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_rank_ic_monotone_invariance(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((6, 8))
        r = rng.standard_normal((6, 8))
        base = rank_ic(f, r)
        for g, h in ((np.exp(f), r), (f, r**3), (2 * f + 7, np.arctan(r))):
            other = rank_ic(g, h)
            np.testing.assert_allclose(other.values, base.values, atol=1e-12, rtol=0)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((10, 10))
        f[rng.uniform(size=f.shape) < 0.2] = np.nan
        r = rng.standard_normal((10, 10))
        assert -1 <= ic(f, r).mean <= 1
        assert -1 <= rank_ic(f, r).mean <= 1
        assert mutual_info(f, r, 4) >= 0

    def test_compute_fitness(self):
        rng = np.random.default_rng(5)
        f = rng.standard_normal((20, 30))
        r = f + rng.standard_normal((20, 30))
        rep = compute_fitness(f, r, bins=4)
        oic = oracles.daily_corr(f, r)
        assert rep.ic == pytest.approx(sum(oic) / len(oic), abs=1e-12)
        assert rep.icir == pytest.approx(oracles.ir_of(oic), abs=1e-12)
        assert rep.classification is Classification.NONE


def test_oracle_matches_on_random_panel():
    rnd = random.Random(8)
    f = np.array([[rnd.gauss(0, 1) for _ in range(10)] for _ in range(20)])
    r = np.array([[rnd.gauss(0, 1) for _ in range(10)] for _ in range(20)])
    np.testing.assert_allclose(rank_ic(f, r).values, oracles.daily_corr(f, r, rank=True), atol=1e-12, rtol=0)
