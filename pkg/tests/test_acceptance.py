"""Acceptance criteria 1-10. A summary line per criterion is printed at the end of the run."""

import json
import random
import time

import numpy as np
import pytest

from alphamine import dsl
from alphamine.agents import astops
from alphamine.agents.backends import MockBackend
from alphamine.agents.candidate import AlphaCandidate, Status
from alphamine.agents.operators import mutate
from alphamine.agents.quality import quality_pipeline
from alphamine.backtest import aer, ir, simulate
from alphamine.evaluation import Evaluator, causality_check, evaluate
from alphamine.evolve import BREED_MODES, EvolutionConfig, run
from alphamine.fitness import (
    METRICS,
    Classification,
    FitnessReport,
    ThresholdConfig,
    classify_cohort,
    ic,
    icir,
    mutual_info,
    rank_ic,
    rank_icir,
)
from alphamine.panel import PLANTED_EXPR, forward_return, prefix, synth_panel

import hand_backtest
import oracles
from leaky import FullSampleZscore
from test_backtest import conservation_gap, random_sim

criterion = pytest.mark.criterion

UPPER_WICK_PER_VOLUME = "(high - close) / (volume + 1e-9)"
RANGE_PER_VOLUME = "(high - low) / (volume + 1e-9)"


def random_metric_panel(rng):
    f = rng.standard_normal((20, 10))
    r = rng.standard_normal((20, 10))
    # ties, gaps and degenerate dates exercise the skip rules
    f[rng.uniform(size=f.shape) < 0.1] = np.nan
    r[rng.uniform(size=r.shape) < 0.1] = np.nan
    f[rng.uniform(size=f.shape) < 0.15] = 0.5
    f[0, :] = 1.0
    r[1, 3:] = np.nan
    return f, r


@criterion(1, "metric oracle equivalence on 200 random 20x10 panels")
def test_metric_oracle_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    for _ in range(200):
        f, r = random_metric_panel(rng)
        s_ic, s_ric = ic(f, r), rank_ic(f, r)
        o_ic = oracles.daily_corr(f.tolist(), r.tolist())
        o_ric = oracles.daily_corr(f.tolist(), r.tolist(), rank=True)
        np.testing.assert_allclose(s_ic.values, o_ic, atol=1e-12, rtol=0)
        np.testing.assert_allclose(s_ric.values, o_ric, atol=1e-12, rtol=0)
        assert abs(s_ic.mean - sum(o_ic) / len(o_ic)) <= 1e-12
        assert abs(s_ric.mean - sum(o_ric) / len(o_ric)) <= 1e-12
        assert abs(icir(s_ic) - oracles.ir_of(o_ic)) <= 1e-12
        assert abs(rank_icir(s_ric) - oracles.ir_of(o_ric)) <= 1e-12
    assert time.perf_counter() - t0 < 10.0


@criterion(2, "mutual information calibration")
def test_mutual_info_calibration():
    x = np.random.default_rng(2).permutation(10_000).astype(float).reshape(100, 100) / 7.0
    assert abs(mutual_info(x, x, 16) - 4.0) <= 1e-9
    rng = np.random.default_rng(42)
    a, b = rng.uniform(size=(100, 100)), rng.uniform(size=(100, 100))
    assert mutual_info(a, b, 16) <= 0.05


@criterion(3, "causality: 1,000 grammar expressions x 5 cutoffs, leaking mutant caught")
def test_causality_property(causal_panel):
    sampler = dsl.Sampler(max_depth=6)
    rng = random.Random(3)
    exprs = [sampler.sample(rng) for _ in range(1000)]
    honest, leaky = Evaluator(), FullSampleZscore()
    failures = []
    mutant_failures = 0
    for i, e in enumerate(exprs):
        res = causality_check(e, causal_panel, 5, i, honest)
        if not res.passed:
            failures.append((dsl.to_text(e), res.report))
        if any(isinstance(n, dsl.CsOp) and n.op == "cs_zscore" for _, n in dsl.walk(e)):
            mutant_failures += not causality_check(e, causal_panel, 5, i, leaky).passed
    assert failures == []
    assert mutant_failures > 0
    assert not causality_check(dsl.parse("cs_zscore(close)"), causal_panel, 5, 0, leaky).passed


def _floored_cohort(rng, cfg):
    n = rng.randint(1, 40)
    out = []
    for _ in range(n):
        values = {}
        for m in METRICS:
            q, e = cfg.qualified_floors[m], cfg.elite_floors[m]
            # cluster values around the floors so the floor rule decides often
            values[m] = rng.choice([rng.uniform(-0.05, q), rng.uniform(q, e + 1e-12), rng.uniform(e, 1.0), q, e])
        out.append(FitnessReport(**values))
    return out


@criterion(4, "classification: elite within qualified, floors enforced, 500 cohorts")
def test_classification_semantics():
    rng = random.Random(4)
    promoted_checks = 0
    for _ in range(500):
        qp = rng.uniform(0, 95)
        ep = rng.uniform(qp + 0.5, 100)
        qf = {m: rng.choice([0.0, 0.005, 0.02, 0.05]) for m in METRICS}
        ef = {m: qf[m] + rng.choice([0.0, 0.005, 0.05]) for m in METRICS}
        default = ThresholdConfig()
        cfg = rng.choice([default, ThresholdConfig(qp, ep, qf, ef)])
        cohort = _floored_cohort(rng, cfg)
        for r in classify_cohort(cohort, cfg):
            below_q = any(getattr(r, m) < cfg.qualified_floors[m] for m in METRICS)
            below_e = any(getattr(r, m) < cfg.elite_floors[m] for m in METRICS)
            if r.classification is Classification.ELITE:
                assert not below_e and not below_q
            if r.classification is not Classification.NONE:
                assert not below_q
            promoted_checks += below_q or below_e
    assert promoted_checks > 1000
    # the defaults are the stated floors
    d = ThresholdConfig()
    assert d.qualified_floors["ic"] == d.qualified_floors["rank_ic"] == 0.005
    assert d.elite_floors["ic"] == d.elite_floors["rank_ic"] == 0.01
    # over the percentile yet under a floor: a one-member cohort is its own 100th percentile
    lone = FitnessReport(ic=0.004, icir=5, rank_ic=0.9, rank_icir=5, mi=0.5)
    assert classify_cohort([lone], d)[0].classification is Classification.NONE
    lone = FitnessReport(ic=0.008, icir=5, rank_ic=0.9, rank_icir=5, mi=0.5)
    assert classify_cohort([lone], d)[0].classification is Classification.QUALIFIED


@pytest.fixture(scope="module")
def default_run():
    panel = synth_panel(42, 250, 50, 0.8)
    cfg = EvolutionConfig()
    t0 = time.perf_counter()
    log = run(cfg, panel, forward_return(panel, 10), backend=MockBackend(7))
    return cfg, log, time.perf_counter() - t0


@criterion(5, "schedule conformance of a default-configuration run")
def test_schedule_conformance(default_run):
    cfg, log, elapsed = default_run
    assert (cfg.initial_pool, cfg.parent_pool, cfg.breed_target) == (80, 32, 96)
    assert (cfg.generations, cfg.subcycles, cfg.gens_per_subcycle) == (24, 3, 8)
    assert (cfg.inject_every, cfg.elites_forward) == (2, 2)
    assert len(log.records) == cfg.subcycles * (1 + cfg.gens_per_subcycle)
    for prev, rec in zip(log.records, log.records[1:]):
        if rec["step"] == 0:
            continue
        assert rec["subcycle"] == prev["subcycle"]
        tallies = rec["op_tallies"]
        assert rec["parents"] <= cfg.parent_pool
        bred = sum(tallies[m] for m in BREED_MODES)
        assert bred == cfg.breed_target
        assert bred - tallies["failed"] >= cfg.breed_target - tallies["failed"]
        assert tallies["injected"] > 0 if rec["step"] % cfg.inject_every == 0 else tallies["injected"] == 0
        # elites carried forward verbatim: same ids, expressions and raw metrics
        assert rec["carried"] == prev["next_carry"]
        # top elites by mean z-score, plus the best raw-IC member when it is not among them
        assert len(rec["carried"]) <= cfg.elites_forward + 1
        assert max(c["ic"] for c in rec["carried"]) == prev["best_ic"]
        assert rec["best_ic"] >= prev["best_ic"]
        assert rec["cohort"] >= cfg.parent_pool or tallies["failed"] or rec["rejects_by_stage"]
    assert elapsed < 300


@criterion(6, "planted signal recovered and generalises to a 60-date holdout")
def test_signal_recovery():
    panel = synth_panel(42, 250, 50, 0.8)
    train = prefix(panel, panel.dates[189])
    cfg = EvolutionConfig.scaled(4, seed=7)
    log = run(cfg, train, forward_return(train, 10), backend=MockBackend(7), seed_exprs=[PLANTED_EXPR])
    assert log.records[0]["cohort"] >= cfg.initial_pool
    planted = dsl.parse(PLANTED_EXPR)
    related = [k for k in log.archive if k == PLANTED_EXPR or astops.differing_nodes(dsl.parse(k), planted) == 1]
    assert related
    labels = forward_return(panel, 10).values[190:]
    holdout = {k: ic(evaluate(dsl.parse(k), panel).values[190:], labels).mean for k in log.archive}
    best_train = max(log.archive.values(), key=lambda e: (e.ic, e.expr))
    assert holdout[best_train.expr] >= 0.30
    assert max(holdout.values()) >= 0.30


@criterion(7, "backtest accounting: hand table and conservation")
def test_backtest_accounting():
    result = simulate(*hand_backtest.fixture())
    exp = hand_backtest.EXPECTED
    assert result.dates == exp["dates"]
    for got, want in zip(result.positions, exp["positions"]):
        assert got.keys() == want.keys()
        assert all(abs(got[t] - want[t]) <= 1e-9 for t in want)
    assert len(result.cost_ledger) == len(exp["trades"])
    for trade, (_, ticker, side, shares, notional, fee) in zip(result.cost_ledger, exp["trades"]):
        assert (trade.ticker, trade.side) == (ticker, side)
        assert abs(trade.shares - shares) <= 1e-9
        assert abs(trade.notional - notional) <= 1e-9
        assert abs(trade.fee - fee) <= 1e-9 and trade.fee >= 5.0
    assert np.max(np.abs(result.daily_excess - np.array(exp["daily_excess"]))) <= 1e-9
    for seed in range(100):
        sim, cfg = random_sim(seed)
        assert conservation_gap(sim) <= 1e-6 * cfg.initial_cash


@criterion(8, "annualised excess return and information ratio spot checks")
def test_formula_spot_checks():
    assert aer([0.001] * 252, 252) == 0.252
    assert aer([0.001] * 1000, 252) == 0.252
    a = 0.01 / np.sqrt(2)
    # 100 alternating deviations rescaled to sample std exactly 0.01
    z = np.array([a, -a] * 50)
    series = 0.001 + z * (0.01 / np.std(z, ddof=1))
    assert abs(ir(series, 252) - 1.5875) <= 1e-4
    assert abs(ir([0.001 + a, 0.001 - a], 252) - 0.1 * np.sqrt(252)) <= 1e-6


@criterion(9, "determinism: identical configuration and seed give identical logs")
def test_determinism(tmp_path):
    panel = synth_panel(9, 120, 20, 0.8)
    labels = forward_return(panel, 10)
    cfg = EvolutionConfig.scaled(3, initial_pool=40, parent_pool=12, seed=9)
    a = run(cfg, panel, labels, backend=MockBackend(9), log_path=tmp_path / "a.jsonl")
    b = run(cfg, panel, labels, backend=MockBackend(9), log_path=tmp_path / "b.jsonl")
    c = run(EvolutionConfig.scaled(3, initial_pool=40, parent_pool=12, seed=9, workers=4), panel, labels,
            backend=MockBackend(9, max_in_flight=4))
    text = a.to_jsonl(include_wall_clock=False)
    assert text == b.to_jsonl(include_wall_clock=False) == c.to_jsonl(include_wall_clock=False)
    assert a.archive_jsonl() == b.archive_jsonl() == c.archive_jsonl()
    strip = [json_without_clock(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert strip == [json_without_clock(line) for line in (tmp_path / "b.jsonl").read_text().splitlines()]


def json_without_clock(line):
    rec = json.loads(line)
    rec.pop("elapsed_s")
    return json.dumps(rec, sort_keys=True)


@criterion(10, "reference expression regression: parse, quality pipeline, seeded mutation")
def test_reference_expression_regression():
    expr = dsl.parse(UPPER_WICK_PER_VOLUME)
    assert dsl.to_text(expr) == UPPER_WICK_PER_VOLUME
    panel = synth_panel(42, 250, 50, 0.8)
    cand = AlphaCandidate("p", UPPER_WICK_PER_VOLUME, "liquidity impact", "upward_impact_per_vol", expr=expr)
    assert quality_pipeline(cand, panel, MockBackend(0)).status is Status.ACCEPTED
    _, _, text = mutate(cand, MockBackend(seed=1), nonce="m")
    assert text == RANGE_PER_VOLUME
    assert astops.differing_nodes(dsl.parse(text), expr) == 1
