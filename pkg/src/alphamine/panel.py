"""OHLCV panel model, CSV ingestion, forward-return labels, synthetic data.

A panel is a set of dates x tickers float matrices. Missing cells are NaN
throughout the package; arrays are frozen (read-only) after construction.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
import numpy as np

log = logging.getLogger(__name__)

FIELDS = ("open", "high", "low", "close", "volume")
CSV_HEADER = ["date", "ticker", *FIELDS]

# planted signal is cs_rank(-(high - close) / (volume + 1e-9))
PLANTED_EXPR = "cs_rank(-(high - close) / (volume + 1e-9))"

_SIGNAL_PERSISTENCE = 0.97
_SIGNAL_LAG = 2  # drift of the open(u-1) -> open(u) return comes from the signal at u-2
_DAILY_VOL = 0.02
_WICK_TO_VOLUME = 1e-7


class PanelError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OhlcvPanel:
    dates: np.ndarray  # datetime64[D], strictly increasing
    tickers: tuple[str, ...]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]").copy()
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "tickers", tuple(str(t) for t in self.tickers))
        shape = (len(dates), len(self.tickers))
        for name in FIELDS:
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise PanelError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        if len(dates) > 1 and not np.all(dates[1:] > dates[:-1]):
            raise PanelError("dates must be strictly increasing")
        if len(set(self.tickers)) != len(self.tickers):
            raise PanelError("duplicate tickers")
        bad = violations(self.open, self.high, self.low, self.close, self.volume)
        if bad.any():
            t, i = map(int, np.argwhere(bad)[0])
            raise PanelError(f"OHLC ordering or volume sign violated at ({dates[t]}, {self.tickers[i]})")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.dates), len(self.tickers)

    def field(self, name: str) -> np.ndarray:
        if name not in FIELDS:
            raise KeyError(name)
        return getattr(self, name)

    def take_dates(self, index: slice | np.ndarray) -> "OhlcvPanel":
        return OhlcvPanel(
            self.dates[index], self.tickers, *(getattr(self, f)[index] for f in FIELDS)
        )

    def __eq__(self, other):
        if not isinstance(other, OhlcvPanel):
            return NotImplemented
        return (
            np.array_equal(self.dates, other.dates)
            and self.tickers == other.tickers
            and all(np.array_equal(self.field(f), other.field(f), equal_nan=True) for f in FIELDS)
        )

    __hash__ = None


def violations(o, h, l, c, v) -> np.ndarray:
    """Cells breaking low <= min(open, close) <= max(open, close) <= high, or volume < 0."""
    with np.errstate(invalid="ignore"):
        full = ~(np.isnan(o) | np.isnan(h) | np.isnan(l) | np.isnan(c))
        lo = np.minimum(o, c)
        hi = np.maximum(o, c)
        bad_price = full & ((l > lo) | (hi > h))
        bad_price |= (o <= 0) | (h <= 0) | (l <= 0) | (c <= 0)
        bad_vol = v < 0
    return bad_price | bad_vol


@dataclass(frozen=True, eq=False)
class FactorMatrix:
    dates: np.ndarray
    tickers: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    dates: np.ndarray
    tickers: tuple[str, ...]
    values: np.ndarray
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def take_dates(self, index) -> "LabelMatrix":
        return LabelMatrix(self.dates[index], self.tickers, self.values[index], self.horizon)


# ----------------------------------------------------------------------- loading


def _parse_float(text: str, what: str, lineno: int) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        value = float(text)
    except ValueError:
        raise PanelError(f"row {lineno}: cannot parse {what} {text!r}") from None
    if not np.isfinite(value):
        raise PanelError(f"row {lineno}: {what} must be finite, got {text!r}")
    return value


def load_csv(path: str | Path) -> OhlcvPanel:
    """Read a ``date,ticker,open,high,low,close,volume`` file into a panel.

    Rows may come in any order; dates end up sorted ascending. Empty fields
    are missing. Rows breaking the OHLC ordering are all reported at once,
    by 1-based line number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PanelError(f"{path}: empty file")
        if [h.strip() for h in header] != CSV_HEADER:
            raise PanelError(f"{path}: malformed header {header!r}, expected {','.join(CSV_HEADER)}")
        cells: dict[tuple[dt.date, str], tuple[int, list[float]]] = {}
        bad_rows: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise PanelError(f"row {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise PanelError(f"row {lineno}: bad date {row[0]!r}") from None
            ticker = row[1].strip()
            if not ticker:
                raise PanelError(f"row {lineno}: empty ticker")
            values = [_parse_float(x, name, lineno) for x, name in zip(row[2:], FIELDS)]
            if violations(*(np.array(v) for v in values)):
                bad_rows.append(lineno)
            key = (day, ticker)
            if key in cells:
                raise PanelError(f"row {lineno}: duplicate entry for {day} {ticker} (first at row {cells[key][0]})")
            cells[key] = (lineno, values)
    if bad_rows:
        raise PanelError(f"rows violating low <= open/close <= high or volume >= 0: {bad_rows}")
    if not cells:
        raise PanelError(f"{path}: no data rows")
    dates = sorted({d for d, _ in cells})
    tickers = sorted({t for _, t in cells})
    d_idx = {d: i for i, d in enumerate(dates)}
    t_idx = {t: i for i, t in enumerate(tickers)}
    data = np.full((len(FIELDS), len(dates), len(tickers)), np.nan)
    for (day, ticker), (_, values) in cells.items():
        data[:, d_idx[day], t_idx[ticker]] = values
    return OhlcvPanel(np.array(dates, dtype="datetime64[D]"), tuple(tickers), *data)


def write_csv(panel: OhlcvPanel, path: str | Path) -> None:
    def fmt(x: float) -> str:
        return "" if np.isnan(x) else repr(float(x))

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for t, day in enumerate(panel.dates):
            for i, ticker in enumerate(panel.tickers):
                writer.writerow([str(day), ticker, *(fmt(panel.field(f)[t, i]) for f in FIELDS)])


# ------------------------------------------------------------------ transforms


def forward_return(panel: OhlcvPanel, horizon: int) -> LabelMatrix:
    """label(t) = open(t + 1 + horizon) / open(t + 1) - 1, NaN where undefined."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n_dates = len(panel.dates)
    labels = np.full(panel.shape, np.nan)
    if n_dates > horizon + 1:
        entry = panel.open[1 : n_dates - horizon]
        exit_ = panel.open[1 + horizon :]
        with np.errstate(invalid="ignore", divide="ignore"):
            labels[: n_dates - horizon - 1] = exit_ / entry - 1.0
    return LabelMatrix(panel.dates, panel.tickers, labels, horizon)


def prefix(panel: OhlcvPanel, cutoff) -> OhlcvPanel:
    """Panel restricted to dates <= cutoff."""
    cutoff = np.datetime64(cutoff, "D")
    if len(panel.dates) == 0 or not panel.dates[0] <= cutoff <= panel.dates[-1]:
        raise PanelError(f"cutoff {cutoff} outside panel range")
    n = int(np.searchsorted(panel.dates, cutoff, side="right"))
    return panel.take_dates(slice(0, n))


# -------------------------------------------------------------------- synthetic


def _business_days(n: int, start: str = "2020-01-02") -> np.ndarray:
    out = []
    day = np.datetime64(start, "D")
    while len(out) < n:
        if np.is_busday(day):
            out.append(day)
        day += 1
    return np.array(out, dtype="datetime64[D]")


def _signal_geometry(phi: float, horizon: int) -> tuple[float, float]:
    """Covariance of the summed drift with today's signal, and variance of that sum."""
    lags = np.arange(horizon)
    cov = float(np.sum(phi**lags))
    var = float(np.sum(phi ** np.abs(lags[:, None] - lags[None, :])))
    return cov, var


def synth_panel(
    seed: int, n_dates: int, n_tickers: int, signal_strength: float, horizon: int = 10
) -> OhlcvPanel:
    """Random-walk OHLCV panel with a planted, persistent predictive signal.

    A per-ticker AR(1) signal ``m`` drives the open-to-open drift two days
    later, so the ``horizon``-day forward return from ``open(t+1)`` loads on
    ``m(t)``. Idiosyncratic noise is scaled so that the cross-sectional
    correlation of ``m(t)`` with that return is about ``signal_strength``
    (capped by what the persistence allows). The bar geometry encodes the
    signal: ``(high - close) / volume = 1e-7 * exp(-m)`` exactly, so
    :data:`PLANTED_EXPR` is a monotone transform of ``m``.
    """
    if n_dates < 30 or n_tickers < 5:
        raise PanelError("synth_panel needs n_dates >= 30 and n_tickers >= 5")
    if not 0.0 <= signal_strength <= 1.0:
        raise PanelError("signal_strength must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    phi = _SIGNAL_PERSISTENCE
    T, N = n_dates, n_tickers

    m = np.empty((T, N))
    m[0] = rng.standard_normal(N)
    shocks = rng.standard_normal((T, N)) * np.sqrt(1 - phi**2)
    for t in range(1, T):
        m[t] = phi * m[t - 1] + shocks[t]

    cov, var = _signal_geometry(phi, horizon)
    rho2 = min(signal_strength, 0.999 * cov / np.sqrt(var)) ** 2
    # beta^2 / (beta^2 + sigma^2), solved without dividing by rho
    signal_share = rho2 * horizon / (cov**2 - rho2 * var + rho2 * horizon)
    beta = _DAILY_VOL * np.sqrt(signal_share)
    sigma = _DAILY_VOL * np.sqrt(1.0 - signal_share)

    drift = np.zeros((T, N))
    drift[_SIGNAL_LAG:] = beta * m[:-_SIGNAL_LAG]
    steps = drift + sigma * rng.standard_normal((T, N))
    steps[0] = 0.0
    log_open = np.log(rng.uniform(10.0, 100.0, N)) + np.cumsum(steps, axis=0)
    open_ = np.exp(log_open)

    close = open_ * np.exp(0.01 * rng.standard_normal((T, N)))
    top = np.maximum(open_, close)
    high = top * np.exp(0.002 + np.abs(0.01 * rng.standard_normal((T, N))))
    low = np.minimum(open_, close) * np.exp(-np.abs(0.01 * rng.standard_normal((T, N))))
    volume = (high - close) * np.exp(m) / _WICK_TO_VOLUME

    tickers = tuple(f"T{i:03d}" for i in range(N))
    return OhlcvPanel(_business_days(T), tickers, open_, high, low, close, volume)

