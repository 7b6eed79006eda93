"""Prompt assembly: paraphrase modes, feedback blocks and the output contract."""

from __future__ import annotations

import enum
import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from .. import dsl
from .profiles import CHECKER_TEMPERATURE, TEMPERATURE_POOL, AgentProfile

DEFAULT_MAX_TOKENS = 4096

DEFAULT_SCHEMA: dict[str, str] = {
    "open": "opening price of the day",
    "high": "highest traded price of the day",
    "low": "lowest traded price of the day",
    "close": "closing price of the day",
    "volume": "shares traded during the day",
}

NO_DATA = "No evaluated factors yet; nothing to learn from at this point."


class ParaphraseMode(str, enum.Enum):
    LIGHT = "light"
    MODERATE = "moderate"
    CREATIVE = "creative"
    DIVERGENT = "divergent"
    CONCRETE = "concrete"


MODE_INSTRUCTIONS = {
    ParaphraseMode.LIGHT: "Follow the direction closely.",
    ParaphraseMode.MODERATE: "Follow the direction, allowing natural variations of emphasis.",
    ParaphraseMode.CREATIVE: "Read the direction as a research question and look for less obvious angles within it.",
    ParaphraseMode.DIVERGENT: "Branch out to a neighbouring mechanism that complements the direction.",
    ParaphraseMode.CONCRETE: "Turn the direction into explicit, measurable formulas.",
}

_LIGHT_SWAPS = (
    ("Look for", "Search for"),
    ("Measure", "Gauge"),
    ("Quantify", "Measure"),
    ("Describe", "Characterise"),
    ("Capture", "Pick up"),
    ("Find", "Locate"),
    ("Track", "Follow"),
    ("Study", "Examine"),
    ("Detect", "Spot"),
    ("recent", "latest"),
    ("relative to", "compared with"),
)

_DIVERGENT_ANGLES = (
    "how the same effect looks when measured on volume instead of price",
    "whether the pattern is stronger right after unusually large bars",
    "how the signal behaves when ranked against the whole cross section",
    "the speed at which the pattern builds up rather than its level",
    "the asymmetry between the up-move and down-move versions of the idea",
)


_NAMED_OPS = (dsl.Unary, dsl.TsOp, dsl.TsCorr, dsl.CsOp, dsl.Gate)


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+", text.strip()) if s.strip()]


def paraphrase(guidance: str, mode: ParaphraseMode, profile: AgentProfile | None = None) -> str:
    """Deterministic rewrite of a guidance text in one of the five modes."""
    mode = ParaphraseMode(mode)
    if mode is ParaphraseMode.LIGHT:
        out = guidance
        budget = 0.15 * len(guidance)
        spent = 0
        for old, new in _LIGHT_SWAPS:
            cost = max(len(old), len(new))
            if old in out and spent + cost <= budget:
                out = out.replace(old, new, 1)
                spent += cost
        return out
    if mode is ParaphraseMode.MODERATE:
        parts = _sentences(guidance)
        rotated = parts[1:] + parts[:1] if len(parts) > 1 else parts
        return "Put differently: " + " ".join(rotated)
    if mode is ParaphraseMode.CREATIVE:
        return (
            guidance
            + " Treat this as an open research question: what behaviour of market participants "
            "would keep such a pattern alive, and how would it leave a trace in daily bars?"
        )
    if mode is ParaphraseMode.DIVERGENT:
        key = int(hashlib.sha256(guidance.encode()).hexdigest(), 16)
        angle = _DIVERGENT_ANGLES[key % len(_DIVERGENT_ANGLES)]
        return guidance + f" Beyond the obvious reading, explore {angle}."
    motifs = list(profile.motifs) if profile and profile.motifs else ["ts_mean(close, 5) / ts_mean(close, 20)"]
    if not any(isinstance(node, _NAMED_OPS) for m in motifs for _, node in dsl.walk(dsl.parse(m))):
        motifs.append(f"cs_rank({motifs[0]})")
    return guidance + " Concretely, start from measurable forms such as: " + "; ".join(motifs) + "."


@dataclass(frozen=True)
class FeedbackSummary:
    effective: str = NO_DATA
    ineffective: str = NO_DATA


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    temperature: float
    max_tokens: int = DEFAULT_MAX_TOKENS
    # not sent over the wire: what kind of request this is and its structured inputs
    task: str = "generate"
    payload: Mapping[str, Any] = field(default_factory=dict)
    nonce: str = ""

    def digest(self) -> str:
        blob = json.dumps(
            [self.system, self.user, self.temperature, self.max_tokens, self.task, dict(self.payload), self.nonce],
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    def messages(self) -> list[dict[str, str]]:
        return [{"role": "system", "content": self.system}, {"role": "user", "content": self.user}]


SYSTEM_PROMPT = (
    "You design quantitative alpha factors for daily equity data. You write each factor as a "
    "single expression in a small formula language and you explain the economic idea behind it."
)


def _schema_block(schema: Mapping[str, str]) -> str:
    lines = [f"- {name}: {desc}" for name, desc in schema.items()]
    return f"The data has {len(schema)} columns, one row per stock and trading day:\n" + "\n".join(lines)


def language_reference() -> str:
    return (
        "Formula language:\n"
        "- columns: " + ", ".join(dsl.COLUMNS) + "; numeric constants such as 1e-9\n"
        "- arithmetic: + - * / (division is guarded against zero denominators)\n"
        "- elementwise: " + ", ".join(dsl.UNARY_FUNCS) + "\n"
        "- time series over the trailing n days (1 <= n <= 252): "
        + ", ".join(f"{f}(x, n)" for f in dsl.TS_FUNCS)
        + ", ts_corr(x, y, n)\n"
        "- cross-sectional per day: cs_rank(x), cs_zscore(x)\n"
        "- conditional: gate(a > b, x, y) or gate(a < b, x, y)"
    )


def constraints_block(caps: dsl.ComplexityCaps = dsl.ComplexityCaps()) -> str:
    return (
        "Hard constraints:\n"
        f"- one idea per factor; at most {caps.max_steps} logical steps (time-series, "
        "cross-sectional and gate operators each count as one step)\n"
        f"- at most {caps.max_nodes} nodes and nesting depth {caps.max_depth}\n"
        "- no redundant stacking such as cs_rank(cs_rank(x)), cs_zscore(cs_zscore(x)), abs(abs(x))\n"
        "- only past and current data; no other columns than those listed"
    )


def output_format(n: int) -> str:
    return (
        f"Output format: return exactly {n} factor{'s' if n != 1 else ''}, no markdown and nothing "
        "outside the blocks. Wrap factor N as\n"
        "<<function N>>\n"
        "factor_name_in_snake_case\n"
        "one line explaining the idea and the formula\n"
        "the expression on a single line\n"
        "<</function N>>"
    )


def _draw_temperature(profile: AgentProfile, rng: random.Random | None) -> float:
    return (rng or random.Random(0)).choice(list(profile.temperature_pool))


def _breeding_temperature(rng: random.Random | None) -> float:
    return CHECKER_TEMPERATURE if rng is None else rng.choice(list(TEMPERATURE_POOL))


def build_prompt(
    profile: AgentProfile,
    mode: ParaphraseMode,
    feedback: FeedbackSummary,
    schema: Mapping[str, str] = DEFAULT_SCHEMA,
    n: int = 4,
    rng: random.Random | None = None,
    nonce: str = "",
    caps: dsl.ComplexityCaps = dsl.ComplexityCaps(),
) -> PromptBundle:
    """Generation prompt for one task agent."""
    if n < 1:
        raise ValueError("n must be >= 1")
    mode = ParaphraseMode(mode)
    guidance = paraphrase(profile.guidance, mode, profile)
    user = "\n\n".join(
        [
            _schema_block(schema),
            f"Create {n} new factors that forecast the 10-day forward return.",
            "What worked recently (observation -> cause -> fix):\n" + feedback.effective,
            "What failed recently (observation -> cause -> fix):\n" + feedback.ineffective,
            f"Direction ({profile.name}, {profile.layer} layer, {mode.value} reading):\n"
            + guidance + "\n" + MODE_INSTRUCTIONS[mode],
            language_reference(),
            constraints_block(caps),
            output_format(n),
        ]
    )
    return PromptBundle(
        SYSTEM_PROMPT,
        user,
        _draw_temperature(profile, rng),
        task="generate",
        payload={"profile": profile.name, "mode": mode.value, "n": n},
        nonce=nonce,
    )


def _single(expr_text: str, name: str, rationale: str) -> str:
    return f"<<function>>\n{name}\n{rationale}\n{expr_text}\n<</function>>"


def repair_prompt(expr_text: str, error: str, name: str, rationale: str, nonce: str = "",
                  schema: Mapping[str, str] = DEFAULT_SCHEMA) -> PromptBundle:
    user = "\n\n".join(
        [
            _schema_block(schema),
            "This factor does not parse or cannot be evaluated. Fix it so that it is valid and "
            "keeps the original idea.",
            _single(expr_text, name, rationale),
            f"Error:\n{error}",
            language_reference(),
            constraints_block(),
            "First state briefly what you change, then give the corrected factor.\n" + output_format(1),
        ]
    )
    return PromptBundle(
        SYSTEM_PROMPT, user, CHECKER_TEMPERATURE, task="repair",
        payload={"expr": expr_text, "error": error, "name": name, "rationale": rationale}, nonce=nonce,
    )


def improve_prompt(expr_text: str, feedback: str, name: str, rationale: str, nonce: str = "",
                   schema: Mapping[str, str] = DEFAULT_SCHEMA) -> PromptBundle:
    user = "\n\n".join(
        [
            _schema_block(schema),
            "A reviewer rejected this factor. Revise it so that it addresses the review while "
            "staying simple and economically sensible.",
            _single(expr_text, name, rationale),
            f"Review:\n{feedback}",
            constraints_block(),
            output_format(1),
        ]
    )
    return PromptBundle(
        SYSTEM_PROMPT, user, CHECKER_TEMPERATURE, task="improve",
        payload={"expr": expr_text, "feedback": feedback, "name": name, "rationale": rationale}, nonce=nonce,
    )


def mutation_prompt(expr_text: str, name: str, rationale: str, rng: random.Random | None = None,
                    nonce: str = "") -> PromptBundle:
    user = "\n\n".join(
        [
            "Make one small, deliberate change to this factor: swap an operator, adjust a window, "
            "or use a different price field. Keep the idea recognisable.",
            _single(expr_text, name, rationale),
            language_reference(),
            constraints_block(),
            output_format(1),
        ]
    )
    return PromptBundle(
        SYSTEM_PROMPT, user, _breeding_temperature(rng),
        task="mutate", payload={"expr": expr_text, "name": name, "rationale": rationale}, nonce=nonce,
    )


def crossover_prompt(a: tuple[str, str, str], b: tuple[str, str, str], rng: random.Random | None = None,
                     nonce: str = "") -> PromptBundle:
    """``a`` and ``b`` are ``(expr, name, rationale)`` triples."""
    user = "\n\n".join(
        [
            "Combine these two factors into one new factor that borrows a component from each.",
            _single(a[0], a[1], a[2]),
            _single(b[0], b[1], b[2]),
            language_reference(),
            constraints_block(),
            output_format(1),
        ]
    )
    return PromptBundle(
        SYSTEM_PROMPT, user, _breeding_temperature(rng),
        task="crossover",
        payload={"a": a[0], "b": b[0], "names": [a[1], b[1]], "rationales": [a[2], b[2]]},
        nonce=nonce,
    )
