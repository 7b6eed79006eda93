"""Generational search: seeding, selection, breeding, injection and elitism."""

from __future__ import annotations

import json
import logging
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dsl
from .agents import quality
from .agents.backends import BackendError, LlmBackend
from .agents.candidate import AlphaCandidate, Status
from .agents.extract import extract_candidates
from .agents.feedback import summarize_feedback
from .agents.operators import crossover, mutate
from .agents.profiles import PROFILES, AgentProfile
from .agents.prompts import FeedbackSummary, ParaphraseMode, build_prompt
from .evaluation import EvalOptions, Evaluator, nan_ratio
from .fitness import (
    METRICS,
    Classification,
    FitnessError,
    FitnessReport,
    ThresholdConfig,
    classify_cohort,
    compute_fitness,
)
from .panel import FactorMatrix, LabelMatrix, OhlcvPanel

log = logging.getLogger(__name__)

BREED_MODES = ("mutation", "crossover", "crossover_mutation")
WALL_CLOCK_FIELDS = ("elapsed_s",)


class RunAborted(RuntimeError):
    def __init__(self, message: str, log_: "RunLog"):
        super().__init__(message)
        self.log = log_


@dataclass(frozen=True)
class EvolutionConfig:
    initial_pool: int = 80
    parent_pool: int = 32
    children_multiplier: int = 3
    generations: int = 24
    subcycles: int = 3
    gens_per_subcycle: int = 8
    inject_every: int = 2
    elites_forward: int = 2
    nan_max: float = 0.30
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    seed: int = 0
    num_per_request: int = 4
    inject_count: int | None = None  # raw task-agent candidates per injection; None means parent_pool
    max_repairs: int = 3
    probe_count: int = 3
    mi_bins: int = 16
    workers: int = 1
    max_seed_rounds: int = 10

    def __post_init__(self):
        if self.subcycles * self.gens_per_subcycle != self.generations:
            raise ValueError(
                f"subcycles x gens_per_subcycle = {self.subcycles * self.gens_per_subcycle} "
                f"!= generations {self.generations}"
            )
        if self.subcycles < 1:
            raise ValueError("subcycles must be >= 1")
        positive = ("initial_pool", "parent_pool", "children_multiplier", "inject_every", "num_per_request",
                    "mi_bins", "workers", "max_seed_rounds")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("elites_forward", "max_repairs", "probe_count", "gens_per_subcycle"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.inject_count is not None and self.inject_count < 0:
            raise ValueError("inject_count must be >= 0")
        if not 0 <= self.nan_max <= 1:
            raise ValueError("nan_max must lie in [0, 1]")

    @classmethod
    def scaled(cls, generations: int, **overrides) -> "EvolutionConfig":
        """Default schedule compressed to ``generations``: three sub-cycles when it divides, else one."""
        subcycles = 3 if generations and generations % 3 == 0 and generations >= 9 else 1
        return cls(generations=generations, subcycles=subcycles, gens_per_subcycle=generations // subcycles,
                   **overrides)

    @property
    def breed_target(self) -> int:
        return self.children_multiplier * self.parent_pool

    @property
    def injection_quota(self) -> int:
        return self.parent_pool if self.inject_count is None else self.inject_count


# ------------------------------------------------------------------ run log


@dataclass(frozen=True)
class ArchiveEntry:
    id: str
    expr: str
    rationale: str
    name: str
    origin: str
    generation: int
    ic: float
    icir: float
    rank_ic: float
    rank_icir: float
    mi: float

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


@dataclass
class RunLog:
    records: list[dict] = field(default_factory=list)
    archive: dict[str, ArchiveEntry] = field(default_factory=dict)  # canonical expr -> first Elite seen
    path: Path | None = None
    aborted: str | None = None

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def to_jsonl(self, include_wall_clock: bool = True) -> str:
        lines = []
        for rec in self.records:
            if not include_wall_clock:
                rec = {k: v for k, v in rec.items() if k not in WALL_CLOCK_FIELDS}
            lines.append(json.dumps(rec, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def archive_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e), sort_keys=True) + "\n" for e in self.archive.values())

    def write_archive(self, path: str | Path) -> None:
        Path(path).write_text(self.archive_jsonl())


def read_archive(path: str | Path) -> list[ArchiveEntry]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(ArchiveEntry(**json.loads(line)))
    return out


# ------------------------------------------------------------- selection


@dataclass
class Member:
    """A cohort member: accepted candidate, its factor values and its fitness."""

    cand: AlphaCandidate
    factor: FactorMatrix
    report: FitnessReport
    carried: bool = False

    @property
    def key(self) -> str:
        return self.cand.canonical


def mean_zscores(reports: Sequence[FitnessReport]) -> np.ndarray:
    """Mean over the five metrics of each report's cohort z-score (population std; 0 when constant)."""
    if not reports:
        return np.zeros(0)
    table = np.array([r.metrics() for r in reports], dtype=float)
    mu = table.mean(axis=0)
    sd = table.std(axis=0)
    z = np.where(sd > 0, (table - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return z.mean(axis=1)


def select_parents(
    ids: Sequence[str], reports: Sequence[FitnessReport], parent_pool: int
) -> list[int]:
    """Indices of the retained parents: Qualified (or Elite) reports ranked by mean z-score, ties by id."""
    z = mean_zscores(reports)
    ok = [i for i, r in enumerate(reports) if r.classification is not Classification.NONE]
    ok.sort(key=lambda i: (-z[i], ids[i]))
    return ok[:parent_pool]


def breed_plan(target: int, n_parents: int, rng: random.Random) -> tuple[list[tuple[str, tuple[int, ...]]], dict]:
    """Breeding jobs ``(mode, parent indices)``: thirds with the remainder given to mutation,
    then crossover; parents drawn uniformly with replacement."""
    if target < 1 or n_parents < 1:
        raise ValueError("need target >= 1 and at least one parent")
    base, rem = divmod(target, 3)
    counts = {m: base + (i < rem) for i, m in enumerate(BREED_MODES)}
    fallback = 0
    if n_parents == 1:
        fallback = counts["crossover"] + counts["crossover_mutation"]
        if fallback:
            log.info("single parent: %d crossover jobs fall back to mutation", fallback)
        counts = {"mutation": target, "crossover": 0, "crossover_mutation": 0}
    jobs = []
    for mode in BREED_MODES:
        for _ in range(counts[mode]):
            if mode == "mutation":
                jobs.append((mode, (rng.randrange(n_parents),)))
            else:
                jobs.append((mode, (rng.randrange(n_parents), rng.randrange(n_parents))))
    return jobs, {**counts, "fallback_to_mutation": fallback}


def breed_one(
    mode: str, parents: Sequence[AlphaCandidate], backend: LlmBackend, nonce: str
) -> tuple[str, str, str] | None:
    if mode == "mutation":
        return mutate(parents[0], backend, nonce)
    child = crossover(parents[0], parents[1], backend, nonce)
    if child is None or mode == "crossover":
        return child
    name, rationale, text = child
    interim = AlphaCandidate("interim", text, rationale, name, expr=dsl.parse(text))
    return mutate(interim, backend, nonce + ":m")


# -------------------------------------------------------------------- engine


class _Engine:
    def __init__(self, config: EvolutionConfig, panel: OhlcvPanel, labels: LabelMatrix,
                 profiles: Sequence[AgentProfile], backend: LlmBackend, evaluator: Evaluator,
                 runlog: RunLog, seed_exprs: Sequence[str]):
        self.cfg = config
        self.panel = panel
        self.labels = labels
        self.profiles = list(profiles)
        self.backend = backend
        self.evaluator = evaluator
        self.log = runlog
        self.seed_exprs = list(seed_exprs)
        self.rng = random.Random(config.seed)
        self.qopts = quality.QualityOptions(
            max_repairs=config.max_repairs, probe_count=config.probe_count, nan_max=config.nan_max,
            caps=evaluator.opts.caps,
        )
        self.memo: dict = {}
        self.fitness_memo: dict[str, FitnessReport | str] = {}
        self.feedback = FeedbackSummary()
        self.profile_cursor = 0
        self.rejected: list[AlphaCandidate] = []
        self.record_index = 0

    # -- helpers

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self.cfg.workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            return list(pool.map(fn, items))

    def _check_backend(self, failures: int, attempts: int, what: str) -> None:
        if attempts and failures == attempts:
            raise BackendError(f"all {attempts} backend requests failed during {what}")

    def _quality(self, cands: Sequence[AlphaCandidate], rejects: dict) -> list[tuple[AlphaCandidate, FactorMatrix]]:
        results = self._map(lambda c: quality.check(c, self.panel, self.backend, self.qopts, self.evaluator, self.memo),
                            cands)
        out = []
        for cand, factor in results:
            if cand.status is Status.ACCEPTED:
                out.append((cand, factor))
            else:
                rejects[cand.reject_stage] = rejects.get(cand.reject_stage, 0) + 1
                self.rejected.append(cand)
        return out

    def _fitness(self, accepted: Iterable[tuple[AlphaCandidate, FactorMatrix]], rejects: dict,
                 seen: set[str]) -> list[Member]:
        members = []
        for cand, factor in accepted:
            key = cand.canonical
            if key in seen:
                rejects["duplicate"] = rejects.get("duplicate", 0) + 1
                continue
            rep = self.fitness_memo.get(key)
            if rep is None:
                try:
                    rep = compute_fitness(factor, self.labels, self.cfg.mi_bins, nan_ratio(factor))
                except FitnessError as err:
                    rep = f"undefined metric: {err}"
                self.fitness_memo[key] = rep
            if isinstance(rep, str):
                rejects["fitness"] = rejects.get("fitness", 0) + 1
                self.rejected.append(cand.rejected("fitness", rep))
                continue
            seen.add(key)
            members.append(Member(cand, factor, rep))
        return members

    def _task_agents(self, quota: int, tag: str, generation: int, temps: list[float]) -> list[AlphaCandidate]:
        """Request at least ``quota`` raw candidates, cycling through the profiles."""
        n = self.cfg.num_per_request
        requests = []
        while len(requests) * n < quota:
            profile = self.profiles[self.profile_cursor % len(self.profiles)]
            self.profile_cursor += 1
            mode = self.rng.choice(list(ParaphraseMode))
            bundle = build_prompt(profile, mode, self.feedback, n=n, rng=self.rng,
                                  nonce=f"{tag}:r{len(requests)}", caps=self.qopts.caps)
            requests.append((profile, bundle))
        temps.extend(b.temperature for _, b in requests)
        replies = self.backend.generate_many([b for _, b in requests])
        failures = sum(isinstance(r, BackendError) for r in replies)
        self._check_backend(failures, len(replies), tag)
        cands = []
        for (profile, _), raw in zip(requests, replies):
            if isinstance(raw, BackendError):
                continue
            for name, rationale, text in extract_candidates(raw)[0]:
                cands.append(AlphaCandidate(f"{tag}-{len(cands):04d}", text, rationale, name,
                                            origin=profile.name, generation=generation))
        return cands

    def _seed_pool(self, tag: str, generation: int, rejects: dict, temps: list[float]) -> list[Member]:
        seen: set[str] = set()
        accepted = []
        seeds = [AlphaCandidate(f"{tag}-seed{i:02d}", text, "user-supplied seed expression", f"seed_{i}",
                                origin="seed", generation=generation) for i, text in enumerate(self.seed_exprs)]
        members = self._fitness(self._quality(seeds, rejects), rejects, seen)
        rounds = 0
        while len(members) < self.cfg.initial_pool and rounds < self.cfg.max_seed_rounds:
            need = self.cfg.initial_pool - len(members)
            cands = self._task_agents(need, f"{tag}-t{rounds}", generation, temps)
            accepted = self._quality(cands, rejects)
            members += self._fitness(accepted, rejects, seen)
            rounds += 1
        if len(members) < self.cfg.initial_pool:
            log.warning("%s: only %d of %d initial candidates survived", tag, len(members), self.cfg.initial_pool)
        return members

    def _carry(self, cohort: list[Member]) -> list[Member]:
        """The top ``elites_forward`` Elites by mean z-score, plus the best raw-IC member if not among them.

        Elite status needs all five metrics, so the best-IC member is not always an Elite;
        carrying it too keeps the cohort's best raw IC from falling within a sub-cycle.
        """
        if not cohort or self.cfg.elites_forward == 0:
            return []
        z = mean_zscores([m.report for m in cohort])
        order = sorted(range(len(cohort)), key=lambda i: (-z[i], cohort[i].cand.id))
        keep = [i for i in order if cohort[i].report.classification is Classification.ELITE][: self.cfg.elites_forward]
        best = min(range(len(cohort)), key=lambda i: (-cohort[i].report.ic, cohort[i].cand.id))
        if best not in keep:
            keep.append(best)
        return [cohort[i] for i in keep]

    def _classify(self, members: list[Member]) -> None:
        reports = classify_cohort([m.report for m in members], self.cfg.thresholds)
        for m, r in zip(members, reports):
            m.report = r

    def _archive(self, members: list[Member]) -> None:
        for m in members:
            if m.report.classification is Classification.ELITE and m.key not in self.log.archive:
                r = m.report
                self.log.archive[m.key] = ArchiveEntry(
                    m.cand.id, m.key, m.cand.rationale, m.cand.name, m.cand.origin, self.record_index,
                    r.ic, r.icir, r.rank_ic, r.rank_icir, r.mi,
                )

    def _update_feedback(self, members: list[Member]) -> None:
        z = mean_zscores([m.report for m in members])
        order = sorted(range(len(members)), key=lambda i: (-z[i], members[i].cand.id))
        top = [(members[i].cand, members[i].report) for i in order
               if members[i].report.classification is not Classification.NONE][:2]
        unqualified = [(members[i].cand, members[i].report) for i in reversed(order)
                       if members[i].report.classification is Classification.NONE]
        worst = list(self.rejected[-2:][::-1]) + unqualified
        self.feedback = summarize_feedback(top, worst[:2])

    @staticmethod
    def _carry_entry(m: Member) -> dict:
        return {"id": m.cand.id, "expr": m.key, "elite": m.report.classification is Classification.ELITE,
                **{k: getattr(m.report, k) for k in METRICS}}

    def _record(self, sub: int, step: int, cohort: list[Member], parents: int, carried: list[dict],
                next_carry: list[Member], tallies: dict, rejects: dict, temps: list[float], t0: float) -> None:
        rec: dict = {
            "generation": self.record_index,
            "subcycle": sub,
            "step": step,
            "cohort": len(cohort),
            "qualified": sum(m.report.classification is not Classification.NONE for m in cohort),
            "elite": sum(m.report.classification is Classification.ELITE for m in cohort),
            "parents": parents,
        }
        for metric in METRICS:
            vals = [getattr(m.report, metric) for m in cohort]
            rec[f"best_{metric}"] = max(vals) if vals else None
            rec[f"mean_{metric}"] = math.fsum(vals) / len(vals) if vals else None
        rec["mi_best"] = rec["best_mi"]
        rec["rejects_by_stage"] = dict(sorted(rejects.items()))
        rec["op_tallies"] = tallies
        rec["carried"] = carried
        rec["next_carry"] = [self._carry_entry(m) for m in next_carry]
        rec["archive_size"] = len(self.log.archive)
        rec["temperature_mean"] = round(math.fsum(temps) / len(temps), 6) if temps else None
        rec["elapsed_s"] = round(time.perf_counter() - t0, 3)
        self.log.append(rec)
        self.record_index += 1

    # -- schedule

    def run(self) -> None:
        cfg = self.cfg
        for sub in range(cfg.subcycles):
            t0 = time.perf_counter()
            self.rejected: list[AlphaCandidate] = []
            rejects: dict = {}
            temps: list[float] = []
            tag = f"s{sub}g0"
            cohort = self._seed_pool(tag, self.record_index, rejects, temps)
            self._classify(cohort)
            self._archive(cohort)
            carry = self._carry(cohort)
            self._update_feedback(cohort)
            self._record(sub, 0, cohort, 0, [], carry, {"task_agent": len(cohort)}, rejects, temps, t0)

            for step in range(1, cfg.gens_per_subcycle + 1):
                t0 = time.perf_counter()
                self.rejected = []
                rejects, temps = {}, []
                tag = f"s{sub}g{step}"
                idx = select_parents([m.cand.id for m in cohort], [m.report for m in cohort], cfg.parent_pool)
                parents = [cohort[i] for i in idx]
                if not parents:
                    log.warning("%s: no qualified parents; falling back to the carried elites", tag)
                    parents = list(carry)
                tallies = {m: 0 for m in BREED_MODES}
                tallies.update(fallback_to_mutation=0, failed=0, injected=0)

                carried = [Member(m.cand, m.factor, m.report, carried=True) for m in carry]
                # logged as carried, before the new cohort re-classifies them
                carried_log = [self._carry_entry(m) for m in carried]
                seen = {m.key for m in carried}
                children: list[Member] = []
                if parents:
                    jobs, counts = breed_plan(cfg.breed_target, len(parents), self.rng)
                    tallies.update(counts)

                    def job(item):
                        k, (mode, pick) = item
                        try:
                            return breed_one(mode, [parents[i].cand for i in pick], self.backend, f"{tag}:b{k}")
                        except BackendError as err:
                            return err

                    outs = self._map(job, list(enumerate(jobs)))
                    backend_failures = sum(isinstance(o, BackendError) for o in outs)
                    self._check_backend(backend_failures, len(outs), tag)
                    cands = []
                    for k, ((mode, pick), out) in enumerate(zip(jobs, outs)):
                        if out is None or isinstance(out, BackendError):
                            tallies["failed"] += 1
                            continue
                        name, rationale, text = out
                        cands.append(AlphaCandidate(f"{tag}-b{k:04d}", text, rationale, name, origin=mode,
                                                    parents=tuple(parents[i].cand.id for i in pick),
                                                    generation=self.record_index))
                    children = self._fitness(self._quality(cands, rejects), rejects, seen)
                if step % cfg.inject_every == 0 and cfg.injection_quota:
                    fresh = self._task_agents(cfg.injection_quota, f"{tag}-inj", self.record_index, temps)
                    injected = self._fitness(self._quality(fresh, rejects), rejects, seen)
                    tallies["injected"] = len(injected)
                    children += injected
                cohort = carried + children
                self._classify(cohort)
                self._archive(cohort)
                next_carry = self._carry(cohort)
                self._update_feedback(cohort)
                self._record(sub, step, cohort, len(parents), carried_log, next_carry, tallies, rejects, temps, t0)
                carry = next_carry


def run(
    config: EvolutionConfig,
    panel: OhlcvPanel,
    labels: LabelMatrix,
    profiles: Sequence[AgentProfile] = PROFILES,
    backend: LlmBackend | None = None,
    *,
    eval_options: EvalOptions | None = None,
    seed_exprs: Sequence[str] = (),
    log_path: str | Path | None = None,
) -> RunLog:
    """Run the full schedule and return its log.

    ``seed_exprs`` join the initial pool of every sub-cycle. With ``log_path`` each
    generation record is appended to that file as soon as it is complete. A run whose
    backend fails every request of a batch raises :class:`RunAborted` carrying the
    partial log.
    """
    if backend is None:
        raise ValueError("a backend is required")
    if panel.tickers != labels.tickers or not np.array_equal(panel.dates, labels.dates):
        raise ValueError("panel and labels are not aligned")
    if not profiles:
        raise ValueError("at least one agent profile is required")
    runlog = RunLog()
    if log_path is not None:
        runlog.path = Path(log_path)
        runlog.path.write_text("")
    engine = _Engine(config, panel, labels, profiles, backend, Evaluator(eval_options), runlog, seed_exprs)
    try:
        engine.run()
    except BackendError as err:
        runlog.aborted = str(err)
        raise RunAborted(f"run aborted after {len(runlog.records)} records: {err}", runlog) from err
    return runlog
