"""JSON run configuration: one record holding every sub-config."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backtest import StrategyConfig
from .dsl import ComplexityCaps
from .evaluation import EvalOptions
from .evolve import EvolutionConfig
from .fitness import ThresholdConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "mock" | "http"
    base_url: str = "http://localhost:8000"
    model: str = "default"
    api_key_env: str = "ALPHAMINE_API_KEY"
    timeout: float = 120.0
    retries: int = 3
    backoff: float = 1.0
    max_in_flight: int = 8
    defect_rate: float = 0.1  # mock only

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ValueError(f"kind must be 'mock' or 'http', got {self.kind!r}")
        if self.timeout <= 0 or self.retries < 0 or self.backoff < 0 or self.max_in_flight < 1:
            raise ValueError("need timeout > 0, retries >= 0, backoff >= 0, max_in_flight >= 1")
        if not 0 <= self.defect_rate <= 1:
            raise ValueError("defect_rate must lie in [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    backend: BackendConfig = field(default_factory=BackendConfig)
    data: str | None = None
    output_dir: str = "out"
    horizon: int = 10

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon: must be >= 1")

    @property
    def thresholds(self) -> ThresholdConfig:
        return self.evolution.thresholds

    # -- serialisation

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return _build(cls, raw, "")

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from err
        return cls.from_dict(raw)


_NESTED = {
    (RunConfig, "evolution"): EvolutionConfig,
    (RunConfig, "strategy"): StrategyConfig,
    (RunConfig, "eval"): EvalOptions,
    (RunConfig, "backend"): BackendConfig,
    (EvolutionConfig, "thresholds"): ThresholdConfig,
    (EvalOptions, "caps"): ComplexityCaps,
}


def _build(cls, raw: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown key '{where}{key}'")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}{key}' must be an object")
            value = _build(sub, value, f"{where}{key}.")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid '{where.rstrip('.') or 'config'}': {err}") from err
