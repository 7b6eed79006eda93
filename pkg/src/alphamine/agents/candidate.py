from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .. import dsl


class Status(str, enum.Enum):
    RAW = "raw"
    REPAIRED = "repaired"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class AlphaCandidate:
    id: str
    text: str  # expression as received; ``expr`` is filled once it parses
    rationale: str = ""
    name: str = ""
    origin: str = ""  # agent profile name or breeding operator
    parents: tuple[str, ...] = ()
    generation: int = 0
    status: Status = Status.RAW
    expr: dsl.Expr | None = None
    reject_stage: str | None = None
    reject_reason: str | None = None
    repairs: int = 0
    improved: bool = False
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.parents) > 2:
            raise ValueError("a candidate has at most two parents")

    @property
    def canonical(self) -> str | None:
        return None if self.expr is None else dsl.to_text(self.expr)

    @property
    def accepted(self) -> bool:
        return self.status is Status.ACCEPTED

    def rejected(self, stage: str, reason: str) -> "AlphaCandidate":
        return replace(self, status=Status.REJECTED, reject_stage=stage, reject_reason=reason)

    def with_note(self, note: str) -> "AlphaCandidate":
        return replace(self, notes=self.notes + (note,))
