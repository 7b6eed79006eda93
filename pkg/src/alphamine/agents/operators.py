"""Breeding requests: one mutation or crossover through a backend, retried once."""

from __future__ import annotations

import logging

from .. import dsl
from .backends import BackendError, LlmBackend
from .candidate import AlphaCandidate
from .extract import extract_candidates
from .prompts import crossover_prompt, mutation_prompt

log = logging.getLogger(__name__)

ATTEMPTS = 2


def _parse_reply(raw: str) -> tuple[str, str, str] | None:
    for name, rationale, text in extract_candidates(raw)[0]:
        try:
            dsl.parse(text)
        except dsl.DslError:
            continue
        return name, rationale, text
    return None


def _source(c: AlphaCandidate) -> str:
    return c.canonical or c.text


def mutate(parent: AlphaCandidate, backend: LlmBackend, nonce: str = "") -> tuple[str, str, str] | None:
    """``(name, rationale, expr_text)`` of a one-edit variant, or ``None`` after two unusable replies.

    Raises :class:`BackendError` if the transport fails.
    """
    for attempt in range(ATTEMPTS):
        raw = backend.generate(mutation_prompt(_source(parent), parent.name, parent.rationale,
                                               nonce=f"{nonce}:{attempt}"))
        out = _parse_reply(raw)
        if out is not None:
            return out
        log.debug("mutation of %s unusable (attempt %d)", parent.id, attempt + 1)
    return None


def crossover(a: AlphaCandidate, b: AlphaCandidate, backend: LlmBackend, nonce: str = "") -> tuple[str, str, str] | None:
    for attempt in range(ATTEMPTS):
        raw = backend.generate(crossover_prompt((_source(a), a.name, a.rationale), (_source(b), b.name, b.rationale),
                                                nonce=f"{nonce}:{attempt}"))
        out = _parse_reply(raw)
        if out is not None:
            return out
        log.debug("crossover of %s x %s unusable (attempt %d)", a.id, b.id, attempt + 1)
    return None


__all__ = ["mutate", "crossover", "BackendError"]
