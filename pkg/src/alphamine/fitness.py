"""Predictive-power metrics and the qualified / elite classification."""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .panel import FactorMatrix, LabelMatrix

METRICS = ("ic", "icir", "rank_ic", "rank_icir", "mi")
MIN_PAIRS = 3


class FitnessError(ValueError):
    pass


class Classification(str, enum.Enum):
    NONE = "none"
    QUALIFIED = "qualified"
    ELITE = "elite"


@dataclass(frozen=True, eq=False)
class MetricSeries:
    dates: tuple[str, ...]
    values: np.ndarray
    mean: float
    std: float  # sample std (T - 1); NaN when T < 2

    @property
    def valid_dates(self) -> int:
        return len(self.values)

    @classmethod
    def from_values(cls, dates: Sequence[str], values: Sequence[float]) -> "MetricSeries":
        vals = np.asarray(values, dtype=float)
        if vals.size == 0:
            raise FitnessError("no valid dates")
        mean = math.fsum(vals) / vals.size
        # exactly rounded, so a constant series has std exactly 0
        std = statistics.stdev(vals.tolist()) if vals.size > 1 else float("nan")
        return cls(tuple(dates), vals, mean, std)


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, (FactorMatrix, LabelMatrix)) else np.asarray(x, dtype=float)


def _dates(factor, n: int) -> list[str]:
    if isinstance(factor, (FactorMatrix, LabelMatrix)):
        return [str(d) for d in factor.dates]
    return [str(i) for i in range(n)]


def _row_corr(f: np.ndarray, r: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row Pearson correlation over masked cells plus a row-validity flag."""
    n = mask.sum(axis=1)
    safe_n = np.maximum(n, 1)
    fz = np.where(mask, f, 0.0)
    rz = np.where(mask, r, 0.0)
    df = np.where(mask, f - (fz.sum(axis=1) / safe_n)[:, None], 0.0)
    dr = np.where(mask, r - (rz.sum(axis=1) / safe_n)[:, None], 0.0)
    cov = (df * dr).sum(axis=1)
    vf = (df * df).sum(axis=1)
    vr = (dr * dr).sum(axis=1)
    # exact constancy test; a float mean can leave tiny residuals on constant rows
    f_const = np.where(mask, f, -np.inf).max(axis=1) == np.where(mask, f, np.inf).min(axis=1)
    r_const = np.where(mask, r, -np.inf).max(axis=1) == np.where(mask, r, np.inf).min(axis=1)
    ok = (n >= MIN_PAIRS) & ~f_const & ~r_const & (vf > 0) & (vr > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.clip(cov / np.sqrt(vf * vr), -1.0, 1.0)
    return corr, ok


def _check_axes(factor, labels) -> tuple[np.ndarray, np.ndarray]:
    f, r = _values(factor), _values(labels)
    if f.shape != r.shape:
        raise FitnessError(f"factor shape {f.shape} != label shape {r.shape}")
    if isinstance(factor, FactorMatrix) and isinstance(labels, LabelMatrix):
        if factor.tickers != labels.tickers or not np.array_equal(factor.dates, labels.dates):
            raise FitnessError("factor and label axes differ")
    return f, r


def ic(factor: FactorMatrix, labels: LabelMatrix) -> MetricSeries:
    """Daily cross-sectional Pearson correlation between factor and forward return."""
    f, r = _check_axes(factor, labels)
    mask = ~np.isnan(f) & ~np.isnan(r)
    corr, ok = _row_corr(f, r, mask)
    dates = _dates(factor, len(f))
    return MetricSeries.from_values([d for d, k in zip(dates, ok) if k], corr[ok])


def rank_ic(factor: FactorMatrix, labels: LabelMatrix) -> MetricSeries:
    """Daily Spearman correlation, average ranks for ties."""
    f, r = _check_axes(factor, labels)
    mask = ~np.isnan(f) & ~np.isnan(r)
    if f.size == 0:
        raise FitnessError("no valid dates")
    fr = rankdata(np.where(mask, f, np.nan), axis=1, nan_policy="omit")
    rr = rankdata(np.where(mask, r, np.nan), axis=1, nan_policy="omit")
    corr, ok = _row_corr(fr, rr, mask)
    dates = _dates(factor, len(f))
    return MetricSeries.from_values([d for d, k in zip(dates, ok) if k], corr[ok])


def icir(series: MetricSeries) -> float:
    if series.valid_dates < 2:
        raise FitnessError("information ratio needs at least 2 dates")
    if not series.std > 0:
        raise FitnessError("information ratio undefined: zero standard deviation")
    return series.mean / series.std


rank_icir = icir


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Bin index per element; sorted position p goes to bin floor(p * bins / n)."""
    order = np.argsort(x, kind="stable")
    out = np.empty(len(x), dtype=np.int64)
    out[order] = (np.arange(len(x)) * bins) // len(x)
    return out


def mutual_info(factor: FactorMatrix, labels: LabelMatrix, bins: int = 16) -> float:
    """Pooled plug-in mutual information in bits, equal-frequency binning on each margin."""
    if bins < 2:
        raise FitnessError("bins must be >= 2")
    f, r = _check_axes(factor, labels)
    mask = ~np.isnan(f) & ~np.isnan(r)
    x, y = f[mask], r[mask]
    if x.size < bins * bins:
        raise FitnessError(f"mutual information needs >= {bins * bins} pairs, got {x.size}")
    joint = np.zeros((bins, bins))
    np.add.at(joint, (equal_frequency_bins(x, bins), equal_frequency_bins(y, bins)), 1.0)
    p = joint / x.size
    pf = p.sum(axis=1, keepdims=True)
    pr = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log2(p[nz] / (pf @ pr)[nz])))
    return max(mi, 0.0)


# ------------------------------------------------------------------- reports


@dataclass(frozen=True)
class FitnessReport:
    ic: float
    icir: float
    rank_ic: float
    rank_icir: float
    mi: float
    nan_ratio: float = 0.0
    classification: Classification = Classification.NONE

    def metrics(self) -> tuple[float, ...]:
        return tuple(getattr(self, m) for m in METRICS)

    def to_dict(self) -> dict:
        out = {m: getattr(self, m) for m in METRICS}
        out["nan_ratio"] = self.nan_ratio
        out["classification"] = self.classification.value
        return out


def compute_fitness(
    factor: FactorMatrix, labels: LabelMatrix, bins: int = 16, nan_ratio: float = 0.0
) -> FitnessReport:
    """All five metrics; raises :class:`FitnessError` when any is undefined."""
    ic_s = ic(factor, labels)
    ric_s = rank_ic(factor, labels)
    return FitnessReport(
        ic=ic_s.mean,
        icir=icir(ic_s),
        rank_ic=ric_s.mean,
        rank_icir=rank_icir(ric_s),
        mi=mutual_info(factor, labels, bins),
        nan_ratio=nan_ratio,
    )


def _default_qualified() -> dict[str, float]:
    return {"ic": 0.005, "rank_ic": 0.005, "icir": 0.05, "rank_icir": 0.05, "mi": 0.02}


def _default_elite() -> dict[str, float]:
    return {"ic": 0.01, "rank_ic": 0.01, "icir": 0.1, "rank_icir": 0.1, "mi": 0.02}


@dataclass(frozen=True)
class ThresholdConfig:
    qualified_percentile: float = 65.0
    elite_percentile: float = 80.0
    qualified_floors: Mapping[str, float] = field(default_factory=_default_qualified)
    elite_floors: Mapping[str, float] = field(default_factory=_default_elite)

    def __post_init__(self):
        for name in ("qualified_floors", "elite_floors"):
            floors = dict(getattr(self, name))
            if set(floors) != set(METRICS):
                raise ValueError(f"{name} must have exactly the keys {sorted(METRICS)}")
            object.__setattr__(self, name, floors)
        if not 0 <= self.qualified_percentile < self.elite_percentile <= 100:
            raise ValueError("need 0 <= qualified_percentile < elite_percentile <= 100")
        for m in METRICS:
            if self.elite_floors[m] < self.qualified_floors[m]:
                raise ValueError(f"elite floor for {m} is below the qualified floor")

    @classmethod
    def from_pair(cls, qualified: float, elite: float) -> "ThresholdConfig":
        return cls(qualified_percentile=qualified, elite_percentile=elite)


@dataclass(frozen=True)
class CohortThresholds:
    qualified: dict[str, float]
    elite: dict[str, float]


def cohort_thresholds(cohort: Sequence[FitnessReport], config: ThresholdConfig) -> CohortThresholds:
    if not cohort:
        raise FitnessError("empty cohort")
    table = np.array([r.metrics() for r in cohort], dtype=float)
    q = np.percentile(table, config.qualified_percentile, axis=0, method="linear")
    e = np.percentile(table, config.elite_percentile, axis=0, method="linear")
    return CohortThresholds(dict(zip(METRICS, q)), dict(zip(METRICS, e)))


def _passes(report: FitnessReport, pct: Mapping[str, float], floors: Mapping[str, float]) -> bool:
    return all(getattr(report, m) >= pct[m] and getattr(report, m) >= floors[m] for m in METRICS)


def classify_with(report: FitnessReport, th: CohortThresholds, config: ThresholdConfig) -> Classification:
    if not _passes(report, th.qualified, config.qualified_floors):
        return Classification.NONE
    if _passes(report, th.elite, config.elite_floors):
        return Classification.ELITE
    return Classification.QUALIFIED


def classify(report: FitnessReport, cohort: Sequence[FitnessReport], config: ThresholdConfig) -> Classification:
    """Qualified iff every metric clears both its cohort percentile and its floor; Elite likewise one tier up."""
    return classify_with(report, cohort_thresholds(cohort, config), config)


def classify_cohort(cohort: Sequence[FitnessReport], config: ThresholdConfig) -> list[FitnessReport]:
    """Reports with ``classification`` filled in, thresholds computed once."""
    if not cohort:
        return []
    th = cohort_thresholds(cohort, config)
    return [replace(r, classification=classify_with(r, th, config)) for r in cohort]
