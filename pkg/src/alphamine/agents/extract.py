"""Pull ``<<function N>>`` blocks out of free-form model output."""

from __future__ import annotations

import re
from dataclasses import dataclass

_OPEN = re.compile(r"<<function(?:\s+(\d+))?\s*>>")
_CLOSE = re.compile(r"<</function(?:\s+(\d+))?\s*>>")
_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_FENCE = re.compile(r"^```[A-Za-z]*$")


@dataclass(frozen=True)
class Extracted:
    name: str
    rationale: str
    expr: str

    def __iter__(self):
        return iter((self.name, self.rationale, self.expr))


@dataclass(frozen=True)
class Diagnostic:
    block: int  # 1-based index among opened blocks
    offset: int  # character offset of the opening tag
    reason: str


def _body_lines(body: str) -> list[str]:
    return [ln.strip() for ln in body.splitlines() if ln.strip() and not _FENCE.match(ln.strip())]


def extract_candidates(raw: str | bytes) -> tuple[list[Extracted], list[Diagnostic]]:
    """Return well-formed ``(name, rationale, expr)`` triples plus one diagnostic per bad block.

    Never raises; bytes are decoded as UTF-8 with replacement.
    """
    if isinstance(raw, (bytes, bytearray)):
        text = bytes(raw).decode("utf-8", errors="replace")
    else:
        text = str(raw)
    found: list[Extracted] = []
    diags: list[Diagnostic] = []
    pos = 0
    block = 0
    while True:
        m = _OPEN.search(text, pos)
        if m is None:
            break
        block += 1
        close = _CLOSE.search(text, m.end())
        nxt = _OPEN.search(text, m.end())
        if close is None or (nxt is not None and nxt.start() < close.start()):
            diags.append(Diagnostic(block, m.start(), "unterminated block"))
            pos = m.end()
            continue
        pos = close.end()
        if m.group(1) and close.group(1) and m.group(1) != close.group(1):
            diags.append(Diagnostic(block, m.start(), f"closing tag {close.group(1)} does not match {m.group(1)}"))
            continue
        lines = _body_lines(text[m.end():close.start()])
        if len(lines) != 3:
            diags.append(Diagnostic(block, m.start(), f"expected 3 non-empty lines (name, rationale, expression), got {len(lines)}"))
            continue
        name, rationale, expr = lines
        if not _NAME.match(name):
            diags.append(Diagnostic(block, m.start(), f"invalid factor name {name[:40]!r}"))
            continue
        found.append(Extracted(name, rationale, expr))
    return found, diags
