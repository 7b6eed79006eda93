import json
import random

import numpy as np
import pytest

from alphamine.agents.backends import BackendError, MockBackend
from alphamine.evolve import (
    BREED_MODES,
    EvolutionConfig,
    RunAborted,
    breed_plan,
    mean_zscores,
    read_archive,
    run,
    select_parents,
)
from alphamine.fitness import Classification, FitnessReport, ThresholdConfig
from alphamine.panel import forward_return, synth_panel


def rep(value, cls=Classification.QUALIFIED):
    return FitnessReport(value, value, value, value, value, classification=cls)


@pytest.fixture(scope="module")
def data():
    panel = synth_panel(42, 120, 20, 0.8)
    return panel, forward_return(panel, 10)


def small(generations=2, **kw):
    base = dict(initial_pool=16, parent_pool=6, seed=3)
    base.update(kw)
    return EvolutionConfig.scaled(generations, **base)


class TestConfig:
    def test_schedule_must_multiply(self):
        with pytest.raises(ValueError):
            EvolutionConfig(generations=24, subcycles=3, gens_per_subcycle=7)

    def test_defaults(self):
        c = EvolutionConfig()
        assert (c.initial_pool, c.parent_pool, c.breed_target, c.generations) == (80, 32, 96, 24)
        assert (c.subcycles, c.gens_per_subcycle, c.inject_every, c.elites_forward) == (3, 8, 2, 2)

    @pytest.mark.parametrize("g,subs", [(0, 1), (4, 1), (8, 1), (9, 3), (24, 3), (10, 1)])
    def test_scaled(self, g, subs):
        c = EvolutionConfig.scaled(g)
        assert c.subcycles == subs and c.subcycles * c.gens_per_subcycle == g


class TestSelectParents:
    def test_caps_at_pool(self):
        reports = [rep(0.01 * i) for i in range(40)]
        assert len(select_parents([f"c{i:02d}" for i in range(40)], reports, 32)) == 32

    def test_under_full(self):
        reports = [rep(0.01 * i) for i in range(10)] + [rep(1.0, Classification.NONE)] * 5
        assert len(select_parents([str(i) for i in range(15)], reports, 32)) == 10

    def test_tie_by_id(self):
        out = select_parents(["b", "a", "c"], [rep(0.1), rep(0.1), rep(0.1)], 3)
        assert out == [1, 0, 2]

    def test_ranked_by_mean_zscore(self):
        reports = [rep(0.1), rep(0.3), rep(0.2)]
        assert select_parents(["x", "y", "z"], reports, 2) == [1, 2]

    def test_none_qualified(self):
        assert select_parents(["a"], [rep(0.5, Classification.NONE)], 4) == []

    def test_zscores_constant_column(self):
        np.testing.assert_array_equal(mean_zscores([rep(0.1), rep(0.1)]), [0.0, 0.0])


class TestBreedPlan:
    @pytest.mark.parametrize("target,counts", [(96, (32, 32, 32)), (7, (3, 2, 2)), (1, (1, 0, 0)), (5, (2, 2, 1))])
    def test_split(self, target, counts):
        jobs, tallies = breed_plan(target, 10, random.Random(0))
        assert tuple(tallies[m] for m in BREED_MODES) == counts
        assert len(jobs) == target and tallies["fallback_to_mutation"] == 0

    def test_single_parent_fallback(self, caplog):
        caplog.set_level("INFO")
        jobs, tallies = breed_plan(6, 1, random.Random(0))
        assert [m for m, _ in jobs] == ["mutation"] * 6
        assert tallies["fallback_to_mutation"] == 4
        assert "fall back to mutation" in caplog.text

    def test_parent_indices_in_range(self):
        jobs, _ = breed_plan(30, 4, random.Random(1))
        for mode, parents in jobs:
            assert len(parents) == (1 if mode == "mutation" else 2)
            assert all(0 <= p < 4 for p in parents)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            breed_plan(5, 0, random.Random(0))


class TestRun:
    def test_generations_zero(self, data):
        log = run(small(0), *data, backend=MockBackend(7))
        assert len(log.records) == 1 and log.records[0]["step"] == 0

    def test_record_count_and_fields(self, data):
        log = run(small(2), *data, backend=MockBackend(7))
        assert len(log.records) == 3
        rec = log.records[-1]
        for key in ("cohort", "qualified", "elite", "parents", "best_ic", "mean_ic", "op_tallies",
                    "rejects_by_stage", "carried", "next_carry", "archive_size", "elapsed_s"):
            assert key in rec
        assert rec["parents"] <= 6

    def test_archive_non_empty_and_meets_elite_floors(self, data):
        log = run(small(2), *data, backend=MockBackend(7))
        assert log.archive
        floors = ThresholdConfig().elite_floors
        for entry in log.archive.values():
            for m, floor in floors.items():
                assert entry.metrics()[m] >= floor

    def test_deterministic_including_workers(self, data):
        a = run(small(2), *data, backend=MockBackend(7))
        b = run(small(2, workers=4), *data, backend=MockBackend(7, max_in_flight=4))
        assert a.to_jsonl(include_wall_clock=False) == b.to_jsonl(include_wall_clock=False)
        assert a.archive_jsonl() == b.archive_jsonl()

    def test_elites_carried_verbatim(self, data):
        log = run(small(3), *data, backend=MockBackend(7))
        for prev, cur in zip(log.records, log.records[1:]):
            if cur["subcycle"] == prev["subcycle"]:
                assert cur["carried"] == prev["next_carry"]

    def test_incremental_log_and_archive_round_trip(self, data, tmp_path):
        path = tmp_path / "run.jsonl"
        log = run(small(1), *data, backend=MockBackend(7), log_path=path)
        lines = path.read_text().splitlines()
        assert [json.loads(x) for x in lines] == log.records
        log.write_archive(tmp_path / "arch.jsonl")
        assert read_archive(tmp_path / "arch.jsonl") == list(log.archive.values())

    def test_seed_exprs_join_pool(self, data):
        log = run(small(0), *data, backend=MockBackend(7), seed_exprs=["cs_rank(-(high - close) / (volume + 1e-9))"])
        assert "cs_rank(-(high - close) / (volume + 1e-9))" in log.archive

    def test_backend_down_aborts_with_partial_log(self, data, tmp_path):
        class Down(MockBackend):
            def generate(self, bundle):
                raise BackendError("connection refused")

        path = tmp_path / "run.jsonl"
        with pytest.raises(RunAborted) as info:
            run(small(2), *data, backend=Down(), log_path=path)
        assert info.value.log.aborted
        assert path.exists()

    def test_misaligned_labels(self, data):
        panel, _ = data
        with pytest.raises(ValueError):
            run(small(0), panel, forward_return(synth_panel(1, 60, 20, 0.5), 10), backend=MockBackend(0))
