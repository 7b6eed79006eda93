"""Multi-stage checker: parse, judge, execute, leakage probe, NaN cut."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, replace

from .. import dsl
from ..evaluation import EvalError, Evaluator, causality_check, nan_ratio
from ..panel import FactorMatrix, OhlcvPanel
from .backends import BackendError, LlmBackend
from .candidate import AlphaCandidate, Status
from .extract import extract_candidates
from .prompts import improve_prompt, repair_prompt

log = logging.getLogger(__name__)

STAGES = ("code_quality", "judge", "execute", "causality", "nan", "backend")


@dataclass(frozen=True)
class QualityOptions:
    max_repairs: int = 3
    improvement_rounds: int = 1
    probe_count: int = 3
    nan_max: float = 0.30
    caps: dsl.ComplexityCaps = dsl.ComplexityCaps()

    def __post_init__(self):
        if self.max_repairs < 0 or self.improvement_rounds < 0 or self.probe_count < 0:
            raise ValueError("max_repairs, improvement_rounds and probe_count must be >= 0")
        if not 0 <= self.nan_max <= 1:
            raise ValueError("nan_max must lie in [0, 1]")


def _first_block(raw: str, fallback_name: str, fallback_rationale: str) -> tuple[str, str, str] | None:
    found, _ = extract_candidates(raw)
    if not found:
        return None
    name, rationale, expr = found[0]
    return name or fallback_name, rationale or fallback_rationale, expr


def judge(cand: AlphaCandidate, caps: dsl.ComplexityCaps) -> list[str]:
    problems = dsl.validate(cand.expr, caps)
    if not cand.rationale.strip():
        problems.append("missing rationale")
    return problems


def check(
    cand: AlphaCandidate,
    panel: OhlcvPanel,
    backend: LlmBackend,
    opts: QualityOptions = QualityOptions(),
    evaluator: Evaluator | None = None,
    memo: dict | None = None,
) -> tuple[AlphaCandidate, FactorMatrix | None]:
    """Run every stage; returns the final candidate and, if accepted, its factor values.

    ``memo`` caches the execute / causality / NaN outcome per canonical expression and
    must only be shared between calls on the same panel, options and evaluator.
    """
    evaluator = evaluator or Evaluator()

    # 1. code quality: parse, asking for repairs on failure
    text, name, rationale = cand.text, cand.name, cand.rationale
    repairs = 0
    while True:
        try:
            expr = dsl.parse(text)
            break
        except dsl.DslError as err:
            if repairs >= opts.max_repairs:
                return cand.rejected("code_quality", f"unrepairable after {repairs} attempts: {err}"), None
            repairs += 1
            try:
                raw = backend.generate(repair_prompt(text, str(err), name, rationale, nonce=f"{cand.id}:repair{repairs}"))
            except BackendError as berr:
                return cand.rejected("backend", str(berr)), None
            block = _first_block(raw, name, rationale)
            if block is not None:
                name, rationale, text = block
    cand = replace(cand, text=text, name=name, rationale=rationale, expr=expr, repairs=repairs,
                   status=Status.REPAIRED if repairs else cand.status)

    # 2. judge, with a bounded number of improvement rounds
    problems = judge(cand, opts.caps)
    rounds = 0
    while problems and rounds < opts.improvement_rounds:
        rounds += 1
        try:
            raw = backend.generate(improve_prompt(cand.text, "; ".join(problems), cand.name, cand.rationale,
                                                  nonce=f"{cand.id}:improve{rounds}"))
        except BackendError as berr:
            return cand.rejected("backend", str(berr)), None
        block = _first_block(raw, cand.name, cand.rationale)
        if block is None:
            break
        try:
            new_expr = dsl.parse(block[2])
        except dsl.DslError as err:
            return cand.rejected("judge", f"improvement does not parse: {err}"), None
        cand = replace(cand, name=block[0], rationale=block[1], text=block[2], expr=new_expr, improved=True)
        problems = judge(cand, opts.caps)
    if problems:
        return cand.rejected("judge", "; ".join(problems)), None

    # stages 3-5 depend only on the canonical form, so their outcome can be shared
    key = cand.canonical
    if memo is not None and key in memo:
        stage, reason, factor = memo[key]
    else:
        stage, reason, factor = _run_checks(cand.expr, key, panel, opts, evaluator)
        if memo is not None:
            memo[key] = (stage, reason, factor)
    if stage is not None:
        return cand.rejected(stage, reason), None
    return replace(cand, status=Status.ACCEPTED), factor


def _run_checks(expr, key, panel, opts, evaluator):
    # 3. execute
    try:
        factor = evaluator.evaluate(expr, panel)
    except EvalError as err:
        return "execute", str(err), None

    # 4. leakage probe
    result = causality_check(expr, panel, opts.probe_count, zlib.crc32(key.encode()), evaluator)
    if not result.passed:
        return "causality", result.report, None

    # 5. NaN cut
    ratio = nan_ratio(factor)
    if ratio > opts.nan_max:
        return "nan", f"nan ratio {ratio:.4f} > {opts.nan_max}", None
    return None, None, factor


def quality_pipeline(
    candidate: AlphaCandidate,
    panel: OhlcvPanel,
    backend: LlmBackend,
    max_repairs: int = 3,
    probe_count: int = 3,
    evaluator: Evaluator | None = None,
    nan_max: float = 0.30,
    caps: dsl.ComplexityCaps = dsl.ComplexityCaps(),
) -> AlphaCandidate:
    opts = QualityOptions(max_repairs=max_repairs, probe_count=probe_count, nan_max=nan_max, caps=caps)
    return check(candidate, panel, backend, opts, evaluator)[0]
