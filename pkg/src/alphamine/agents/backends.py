"""Model backends: an OpenAI-style chat-completions client and a deterministic offline mock."""

from __future__ import annotations

import abc
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import httpx

from .. import dsl
from . import astops
from .profiles import PROFILE_BY_NAME, AgentProfile
from .prompts import PromptBundle

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Transport failure that survived all retries."""


class LlmBackend(abc.ABC):
    max_in_flight: int = 1

    @abc.abstractmethod
    def generate(self, bundle: PromptBundle) -> str:
        """Raw completion text for one prompt."""

    def generate_many(self, bundles: Sequence[PromptBundle]) -> list[str | BackendError]:
        """Run prompts with at most ``max_in_flight`` concurrent requests; results keep input order."""

        def one(b: PromptBundle) -> str | BackendError:
            try:
                return self.generate(b)
            except BackendError as err:
                return err

        if self.max_in_flight <= 1 or len(bundles) <= 1:
            return [one(b) for b in bundles]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, bundles))


class HttpBackend(LlmBackend):
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "ALPHAMINE_API_KEY",
        timeout: float = 120.0,
        retries: int = 3,
        max_in_flight: int = 8,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
    ):
        if retries < 0 or max_in_flight < 1 or timeout <= 0:
            raise ValueError("need retries >= 0, max_in_flight >= 1, timeout > 0")
        self.url = base_url.rstrip("/") + "/v1/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.max_in_flight = max_in_flight
        self.backoff = backoff
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def generate(self, bundle: PromptBundle) -> str:
        body = {
            "model": self.model,
            "messages": bundle.messages(),
            "temperature": bundle.temperature,
            "max_tokens": bundle.max_tokens,
        }
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._client.post(self.url, json=body, headers=self._headers())
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = BackendError(f"HTTP {resp.status_code} from {self.url}")
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
                return resp.json()["choices"][0]["message"]["content"] or ""
            except httpx.HTTPError as err:
                last = err
            except (KeyError, IndexError, TypeError, ValueError) as err:
                raise BackendError(f"malformed response from {self.url}: {err}") from err
            log.warning("request to %s failed (attempt %d/%d): %s", self.url, attempt + 1, self.retries + 1, last)
        raise BackendError(f"{self.url} unreachable after {self.retries + 1} attempts: {last}")


def _block(i: int, name: str, rationale: str, expr: str) -> str:
    return f"<<function {i}>>\n{name}\n{rationale}\n{expr}\n<</function {i}>>"


def _break(expr_text: str, rng: random.Random) -> str:
    """A realistic defect for the checker stages to deal with."""
    kind = rng.choice(("window", "paren", "stack"))
    if kind == "window":
        return f"ts_mean({expr_text}, 300)"
    if kind == "paren":
        return f"({expr_text}"
    return f"cs_rank(cs_rank({expr_text}))"


class MockBackend(LlmBackend):
    """Offline stand-in: output is a pure function of ``(seed, bundle.digest())``.

    Generation draws profile motifs and grammar samples over the profile's columns;
    repair, improvement, mutation and crossover use the tree operators in
    :mod:`alphamine.agents.astops`. Temperature is ignored.
    """

    def __init__(self, seed: int = 0, defect_rate: float = 0.1, caps: dsl.ComplexityCaps = dsl.ComplexityCaps(),
                 max_in_flight: int = 1):
        self.seed = seed
        self.defect_rate = defect_rate
        self.caps = caps
        self.max_in_flight = max_in_flight

    def rng_for(self, bundle: PromptBundle) -> random.Random:
        return random.Random(f"{self.seed}:{bundle.digest()}")

    def generate(self, bundle: PromptBundle) -> str:
        rng = self.rng_for(bundle)
        handler = getattr(self, f"_{bundle.task}", None)
        if handler is None:
            raise BackendError(f"mock backend has no handler for task {bundle.task!r}")
        return handler(bundle, rng)

    # -- tasks

    def _candidate_expr(self, profile: AgentProfile, rng: random.Random) -> dsl.Expr:
        if profile.motifs and rng.random() < 0.4:
            expr = dsl.parse(rng.choice(profile.motifs))
            if rng.random() < 0.5:
                expr = astops.mutate_ast(expr, rng, self.caps) or expr
            return expr
        sampler = dsl.Sampler(self.caps, columns=profile.focus, windows=profile.windows)
        return sampler.sample(rng)

    def _generate(self, bundle: PromptBundle, rng: random.Random) -> str:
        profile = PROFILE_BY_NAME[bundle.payload["profile"]]
        n = int(bundle.payload.get("n", 4))
        blocks = []
        for i in range(1, n + 1):
            text = dsl.to_text(self._candidate_expr(profile, rng))
            # the first block is always clean so every reply has something usable
            if i > 1 and rng.random() < self.defect_rate:
                text = _break(text, rng)
            name = f"{profile.name[5:].lower()}_{rng.randrange(16**6):06x}"
            rationale = f"{profile.layer} idea: {text}"
            blocks.append(_block(i, name, rationale, text))
        return "\n\n".join(blocks)

    def _repair(self, bundle: PromptBundle, rng: random.Random) -> str:
        p = bundle.payload
        fixed = astops.repair_text(p["expr"], self.caps) or p["expr"]
        rationale = p.get("rationale") or f"Repaired formula: {fixed}"
        return _block(1, p.get("name") or "repaired_factor", rationale, fixed)

    def _improve(self, bundle: PromptBundle, rng: random.Random) -> str:
        p = bundle.payload
        try:
            out = astops.simplify_ast(dsl.parse(p["expr"]), self.caps)
        except dsl.DslError:
            out = None
        text = p["expr"] if out is None else dsl.to_text(out)
        rationale = p.get("rationale") or f"Simplified formula: {text}"
        return _block(1, p.get("name") or "improved_factor", rationale, text)

    def _mutate(self, bundle: PromptBundle, rng: random.Random) -> str:
        p = bundle.payload
        out = astops.mutate_ast(dsl.parse(p["expr"]), rng, self.caps)
        if out is None:
            return "no change possible"
        text = dsl.to_text(out)
        return _block(1, f"{p.get('name') or 'factor'}_m", f"Variant of {p['expr']}: {text}", text)

    def _crossover(self, bundle: PromptBundle, rng: random.Random) -> str:
        p = bundle.payload
        out = astops.crossover_ast(dsl.parse(p["a"]), dsl.parse(p["b"]), rng, self.caps)
        if out is None:
            return "no valid combination"
        text = dsl.to_text(out)
        names = p.get("names") or ["a", "b"]
        return _block(1, f"{names[0]}_x", f"Combines {p['a']} with part of {p['b']}: {text}", text)
