from __future__ import annotations

from typing import Sequence

from ..fitness import FitnessReport
from .candidate import AlphaCandidate
from .prompts import NO_DATA, FeedbackSummary

_CAUSES = {
    "code_quality": ("the formula could not be parsed even after repair", "use only the listed operators and integer windows in 1..252"),
    "judge": ("it broke the complexity or redundancy rules", "keep to at most five steps and never stack the same normaliser"),
    "execute": ("it could not be evaluated on the panel", "check operator arity and argument order"),
    "causality": ("its values changed when future rows were removed, i.e. it leaks future data", "use only delay with positive lags and trailing windows"),
    "nan": ("too many values were missing", "shorten warm-up windows and guard divisions"),
    "backend": ("the model request failed", "retry with a shorter answer"),
    "fitness": ("its predictive metrics fell below the cohort thresholds", "change the mechanism instead of tuning constants"),
}


def _metrics(r: FitnessReport) -> str:
    return (
        f"IC {r.ic:.4f}, ICIR {r.icir:.4f}, RankIC {r.rank_ic:.4f}, "
        f"RankICIR {r.rank_icir:.4f}, MI {r.mi:.4f}"
    )


def _expr(c: AlphaCandidate) -> str:
    return c.canonical or c.text


def summarize_feedback(
    valid_top: Sequence[tuple[AlphaCandidate, FitnessReport]],
    invalid_worst: Sequence[AlphaCandidate | tuple[AlphaCandidate, FitnessReport | None]],
) -> FeedbackSummary:
    """Observation / cause / fix notes from the two best valid and two worst invalid factors."""
    good = []
    for cand, rep in list(valid_top)[:2]:
        good.append(
            f"- Observation: {_expr(cand)} reached {_metrics(rep)}.\n"
            f"  Cause: {cand.rationale or 'no rationale given'}\n"
            "  Fix: keep this mechanism and try a neighbouring window or normalisation."
        )
    bad = []
    for item in list(invalid_worst)[:2]:
        cand, rep = item if isinstance(item, tuple) else (item, None)
        stage = cand.reject_stage or "fitness"
        cause, fix = _CAUSES.get(stage, _CAUSES["fitness"])
        what = f"rejected at the {stage} stage ({cand.reject_reason})" if cand.reject_stage else "did not qualify"
        if rep is not None:
            what += f" with {_metrics(rep)}"
        bad.append(f"- Observation: {_expr(cand)} was {what}.\n  Cause: {cause}.\n  Fix: {fix}.")
    return FeedbackSummary(
        effective="\n".join(good) if good else NO_DATA,
        ineffective="\n".join(bad) if bad else NO_DATA,
    )
