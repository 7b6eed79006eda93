import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphamine.dsl import Sampler, parse
from alphamine.evaluation import EvalError, EvalOptions, Evaluator, causality_check, evaluate, nan_ratio
from alphamine.panel import OhlcvPanel, prefix, synth_panel

from conftest import make_panel
from leaky import FullSampleZscore


def bar_panel(high, close, volume):
    d = np.array(["2024-01-02"], dtype="datetime64[D]")
    one = lambda v: np.array([[v]], dtype=float)  # noqa: E731
    return OhlcvPanel(d, ("A",), one(close), one(high), one(close), one(close), one(volume))


def series_panel(closes):
    return make_panel([[c] for c in closes])


class TestEvaluate:
    def test_identity(self, small_panel):
        out = evaluate(parse("close"), small_panel)
        assert np.array_equal(out.values, small_panel.close)

    def test_upper_wick_hand_value(self):
        out = evaluate(parse("(high - close) / (volume + 1e-9)"), bar_panel(10, 9, 1000))
        assert out.values[0, 0] == pytest.approx(0.001, abs=1e-9)

    def test_rolling_mean(self):
        out = evaluate(parse("ts_mean(close, 3)"), series_panel([1, 2, 3, 4])).values[:, 0]
        assert np.isnan(out[:2]).all() and out[2:].tolist() == [2.0, 3.0]

    def test_delay_and_delta(self):
        p = series_panel([1, 2, 4, 7])
        assert np.isnan(evaluate(parse("delay(close, 1)"), p).values[0, 0])
        assert evaluate(parse("delay(close, 1)"), p).values[1:, 0].tolist() == [1, 2, 4]
        assert evaluate(parse("delta(close, 2)"), p).values[2:, 0].tolist() == [3, 5]

    def test_ts_std_sample(self):
        out = evaluate(parse("ts_std(close, 3)"), series_panel([1, 2, 3])).values[2, 0]
        assert out == pytest.approx(1.0)

    def test_cs_rank_ties(self):
        p = make_panel([[3.0, 1.0, 3.0, 2.0]])
        assert evaluate(parse("cs_rank(open)"), p).values[0].tolist() == pytest.approx([5 / 6, 0, 5 / 6, 1 / 3])

    def test_cs_rank_single_name_missing(self):
        p = make_panel([[1.0, np.nan]])
        assert np.isnan(evaluate(parse("cs_rank(open)"), p).values).all()

    def test_cs_zscore(self):
        p = make_panel([[1.0, 2.0, 3.0]])
        assert evaluate(parse("cs_zscore(open)"), p).values[0].tolist() == pytest.approx([-1, 0, 1])

    def test_cs_zscore_constant_missing(self):
        p = make_panel([[2.0, 2.0, 2.0]])
        assert np.isnan(evaluate(parse("cs_zscore(open)"), p).values).all()

    def test_log1p_domain(self):
        p = make_panel([[1.0]])
        assert np.isnan(evaluate(parse("log1p(0 - open - 1)"), p).values[0, 0])

    def test_guarded_division_by_zero(self):
        p = make_panel([[1.0]])
        assert evaluate(parse("open / (open - open)"), p).values[0, 0] == 0.0

    def test_guarded_division_sign_symmetric(self):
        p = make_panel([[2.0]])
        a = evaluate(parse("1 / open"), p).values[0, 0]
        b = evaluate(parse("1 / (0 - open)"), p).values[0, 0]
        assert a == -b and a == pytest.approx(0.5)

    def test_gate(self):
        p = make_panel([[1.0, 5.0]])
        assert evaluate(parse("gate(open > 2, open, 0 - open)"), p).values[0].tolist() == [-1.0, 5.0]

    def test_missing_propagates(self):
        p = make_panel([[1.0, np.nan]])
        assert np.isnan(evaluate(parse("abs(open) + 1"), p).values[0, 1])

    def test_refuses_over_caps(self):
        with pytest.raises(EvalError):
            evaluate(parse("cs_rank(cs_rank(close))"), make_panel([[1.0, 2.0]]))

    def test_partial_window_fill(self):
        p = series_panel([1, np.nan, 3, 5])
        strict = evaluate(parse("ts_mean(close, 2)"), p).values[:, 0]
        loose = evaluate(parse("ts_mean(close, 2)"), p, EvalOptions(min_window_fill=0.5)).values[:, 0]
        assert np.isnan(strict[:3]).all() and strict[3] == 4.0
        assert loose[1:].tolist() == [1.0, 3.0, 4.0]

    def test_options_validated(self):
        with pytest.raises(ValueError):
            EvalOptions(epsilon=0)
        with pytest.raises(ValueError):
            EvalOptions(min_window_fill=0)


class TestNanRatio:
    def test_examples(self):
        assert nan_ratio(np.ones((3, 3))) == 0.0
        assert nan_ratio(np.array([[1.0, np.nan]])) == 0.5
        out = evaluate(parse("ts_mean(close, 5)"), series_panel(range(1, 11)))
        assert nan_ratio(out) == 0.4

    def test_empty(self):
        with pytest.raises(EvalError):
            nan_ratio(np.empty((0, 3)))


class TestCausality:
    def test_grammar_valid_passes(self, causal_panel):
        assert causality_check(parse("cs_zscore(ts_mean(close, 5))"), causal_panel, 5, 0)

    def test_zero_probes(self, causal_panel):
        assert causality_check(parse("close"), causal_panel, 0, 0).passed

    def test_leaky_mutant_fails_and_names_subterm(self, causal_panel):
        res = causality_check(parse("cs_zscore(close)"), causal_panel, 3, 0, FullSampleZscore())
        assert not res.passed
        assert res.subterm == "cs_zscore(close)"
        assert res.ticker in causal_panel.tickers and res.date is not None

    def test_needs_three_dates(self):
        with pytest.raises(ValueError):
            causality_check(parse("close"), series_panel([1, 2]), 1, 0)

    @given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_prefix_consistency_property(self, expr_seed, panel_seed):
        panel = synth_panel(panel_seed % 1000, 40, 6, 0.5)
        expr = Sampler().sample(random.Random(expr_seed))
        full = evaluate(expr, panel).values
        t = expr_seed % len(panel.dates)
        part = evaluate(expr, prefix(panel, panel.dates[t])).values
        np.testing.assert_array_equal(part, full[: t + 1])


class TestProperties:
    @given(st.lists(st.floats(1e-3, 1e6), min_size=2, max_size=12), st.randoms())
    def test_cs_rank_range_and_equivariance(self, row, rnd):
        p = make_panel([row])
        out = evaluate(parse("cs_rank(open)"), p).values[0]
        assert ((out >= 0) & (out <= 1)).all()
        perm = list(range(len(row)))
        rnd.shuffle(perm)
        shuffled = evaluate(parse("cs_rank(open)"), make_panel([[row[i] for i in perm]])).values[0]
        assert shuffled.tolist() == [out[i] for i in perm]

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_guarded_division_finite(self, a, b):
        out = Evaluator().op_binary("/", np.array([a]), np.array([b]))
        assert np.isfinite(out).all()

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_guarded_division_finite_in_expressions(self, a, b):
        p = make_panel([[a, b]])
        out = evaluate(parse("(open - 1) / (open - open)"), p).values
        assert np.isfinite(out).all()

    def test_deterministic(self, small_panel):
        e = parse("ts_corr(close, volume, 10) * cs_rank(delta(open, 3))")
        assert evaluate(e, small_panel).values.tobytes() == Evaluator().evaluate(e, small_panel).values.tobytes()
