"""Elite combination, top-k / drop-n portfolio simulation, AER and IR."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsl
from .evaluation import EvalOptions, Evaluator
from .fitness import FitnessError, ic
from .panel import FactorMatrix, LabelMatrix, OhlcvPanel

log = logging.getLogger(__name__)


class BacktestError(ValueError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    top_k: int = 50
    drop_n: int = 5
    buy_cost: float = 0.0005
    sell_cost: float = 0.0015
    min_fee: float = 5.0
    periods_per_year: int = 252
    initial_cash: float = 1e8

    def __post_init__(self):
        if self.top_k < 1 or self.drop_n < 0 or self.drop_n > self.top_k:
            raise ValueError("need top_k >= 1 and 0 <= drop_n <= top_k")
        if self.buy_cost < 0 or self.sell_cost < 0 or self.min_fee < 0:
            raise ValueError("costs must be non-negative")
        if self.initial_cash <= 0 or self.periods_per_year < 1:
            raise ValueError("initial_cash and periods_per_year must be positive")


# ----------------------------------------------------------------------- metrics


def aer(daily_excess: Sequence[float], periods_per_year: int = 252) -> float:
    """Annualised excess return: arithmetic mean times periods per year."""
    x = list(daily_excess)
    if not x:
        raise BacktestError("aer of an empty series")
    return math.fsum(x) / len(x) * periods_per_year


def ir(daily_excess: Sequence[float], periods_per_year: int = 252) -> float:
    """Information ratio: mean over sample std, scaled by sqrt(periods per year)."""
    x = np.asarray(daily_excess, dtype=float)
    if x.size < 2:
        raise BacktestError("ir needs at least 2 observations")
    mean = math.fsum(x) / x.size
    std = math.sqrt(math.fsum((x - mean) ** 2) / (x.size - 1))
    if std == 0:
        raise BacktestError("ir undefined: zero standard deviation")
    return mean / std * math.sqrt(periods_per_year)


# ---------------------------------------------------------------------- combiner


def combine(
    elites: Sequence[dsl.Expr | str],
    panel: OhlcvPanel,
    labels: LabelMatrix,
    train_dates: tuple,
    opts: EvalOptions | None = None,
) -> FactorMatrix:
    """Equal-weight average of per-date z-scored elites, each signed by its training IC."""
    if not elites:
        raise BacktestError("no elites to combine")
    evaluator = Evaluator(opts)
    start, end = (np.datetime64(d, "D") for d in train_dates)
    train = (panel.dates >= start) & (panel.dates <= end)
    total = np.zeros(panel.shape)
    count = np.zeros(panel.shape)
    for item in elites:
        expr = dsl.parse(item) if isinstance(item, str) else item
        values = evaluator.values(expr, panel)
        z = evaluator.op_cs_zscore(values)
        try:
            sign = 1.0 if ic(values[train], labels.values[train]).mean >= 0 else -1.0
        except FitnessError:
            log.warning("no training IC for %s; keeping its sign", dsl.to_text(expr))
            sign = 1.0
        present = ~np.isnan(z)
        total += np.where(present, sign * z, 0.0)
        count += present
    with np.errstate(invalid="ignore"):
        score = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return FactorMatrix(panel.dates, panel.tickers, score)


# --------------------------------------------------------------------- simulator


@dataclass(frozen=True)
class Trade:
    date: str
    ticker: str
    side: str  # "buy" | "sell"
    shares: float
    price: float
    notional: float
    fee: float


@dataclass(frozen=True)
class Snapshot:
    """Account state right after the trades of one open."""

    date: str
    cash: float
    holdings_value: float
    cum_fees: float
    cum_gross_pnl: float


@dataclass
class BacktestResult:
    dates: list[str]
    daily_excess: np.ndarray
    portfolio_return: np.ndarray
    benchmark_return: np.ndarray
    cost: np.ndarray
    aer: float
    ir: float
    positions: list[dict[str, float]]
    cost_ledger: list[Trade]
    snapshots: list[Snapshot] = field(default_factory=list)
    initial_cash: float = 0.0

    @property
    def total_fees(self) -> float:
        return math.fsum(t.fee for t in self.cost_ledger)

    def summary(self) -> dict:
        def num(x: float):
            return None if not math.isfinite(x) else x

        return {
            "aer": num(self.aer),
            "ir": num(self.ir),
            "days": len(self.dates),
            "trades": len(self.cost_ledger),
            "buys": sum(t.side == "buy" for t in self.cost_ledger),
            "sells": sum(t.side == "sell" for t in self.cost_ledger),
            "total_fees": self.total_fees,
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "daily_excess.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "portfolio_return", "benchmark_return", "cost", "excess"])
            for row in zip(self.dates, self.portfolio_return, self.benchmark_return, self.cost, self.daily_excess):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
        with (out / "trades.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(Trade.__dataclass_fields__))
            for t in self.cost_ledger:
                w.writerow(list(asdict(t).values()))
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")


def _ranking(scores: np.ndarray) -> list[int]:
    """Ticker indices best first; ties by ticker order, missing scores last."""
    present = [i for i in range(len(scores)) if not np.isnan(scores[i])]
    missing = [i for i in range(len(scores)) if np.isnan(scores[i])]
    return sorted(present, key=lambda i: (-scores[i], i)) + missing


def simulate(scores: FactorMatrix, panel: OhlcvPanel, config: StrategyConfig = StrategyConfig()) -> BacktestResult:
    """Daily top-k / drop-n rebalancing traded at the next open.

    Scores of date ``d - 1`` drive the trades at the open of ``d``; the day's
    return runs from that open to the open of ``d + 1``. Existing holdings are
    never resized. At most ``drop_n`` held names that fell out of the top
    ``k`` are sold each day (worst-ranked first) and the freed cash is split
    equally over the best-ranked names not yet held.
    """
    s = scores.values if isinstance(scores, FactorMatrix) else np.asarray(scores)
    if s.shape != panel.shape:
        raise BacktestError(f"score shape {s.shape} != panel shape {panel.shape}")
    n_dates, n_tickers = panel.shape
    k = min(config.top_k, n_tickers)
    if k < config.top_k:
        log.warning("universe has %d tickers < top_k %d; holding the whole universe", n_tickers, config.top_k)
    opens = panel.open
    mark = np.full(n_tickers, np.nan)
    cash = float(config.initial_cash)
    shares: dict[int, float] = {}
    cum_fees = cum_gross = 0.0
    out_dates, port, bench, costs = [], [], [], []
    positions: list[dict[str, float]] = []
    ledger: list[Trade] = []
    snaps: list[Snapshot] = []

    for d in range(1, n_dates - 1):
        day = str(panel.dates[d])
        px = opens[d]
        mark = np.where(np.isnan(px), mark, px)
        v_pre = cash + math.fsum(q * mark[i] for i, q in shares.items())
        order = _ranking(s[d - 1])
        rank_pos = {i: p for p, i in enumerate(order)}
        top = {i for i in order[:k] if not np.isnan(s[d - 1, i])}
        tradable = ~np.isnan(px)
        fees_today = 0.0

        outside = [i for i in shares if i not in top and tradable[i]]
        outside.sort(key=lambda i: rank_pos[i], reverse=True)
        for i in outside[: config.drop_n]:
            qty = shares.pop(i)
            notional = qty * px[i]
            fee = max(config.min_fee, notional * config.sell_cost)
            cash += notional - fee
            fees_today += fee
            ledger.append(Trade(day, panel.tickers[i], "sell", float(qty), float(px[i]), float(notional), float(fee)))

        slots = k - len(shares)
        buys = [i for i in order if i not in shares and tradable[i] and not np.isnan(s[d - 1, i])][:slots]
        if buys:
            budget = cash / len(buys)
            for i in buys:
                notional = budget / (1.0 + config.buy_cost)
                if notional * config.buy_cost < config.min_fee:
                    notional = budget - config.min_fee
                if notional <= 0:
                    log.warning("%s: budget %.2f cannot cover the minimum fee; skipping %s", day, budget, panel.tickers[i])
                    continue
                fee = max(config.min_fee, notional * config.buy_cost)
                shares[i] = notional / px[i]
                cash -= notional + fee
                fees_today += fee
                ledger.append(Trade(day, panel.tickers[i], "buy", float(shares[i]), float(px[i]), float(notional), float(fee)))

        cum_fees += fees_today
        holdings_value = math.fsum(q * mark[i] for i, q in shares.items())
        snaps.append(Snapshot(day, cash, holdings_value, cum_fees, cum_gross))
        positions.append({panel.tickers[i]: float(q) for i, q in sorted(shares.items())})

        nxt = opens[d + 1]
        next_mark = np.where(np.isnan(nxt), mark, nxt)
        gross = math.fsum(q * (next_mark[i] - mark[i]) for i, q in shares.items())
        cum_gross += gross
        both = ~np.isnan(px) & ~np.isnan(nxt)
        bench_ret = float(np.mean(nxt[both] / px[both] - 1.0)) if both.any() else 0.0
        out_dates.append(day)
        port.append(gross / v_pre)
        costs.append(fees_today / v_pre)
        bench.append(bench_ret)

    port_a, bench_a, cost_a = (np.array(x, dtype=float) for x in (port, bench, costs))
    excess = port_a - bench_a - cost_a
    n = config.periods_per_year
    aer_v = aer(excess, n) if excess.size else float("nan")
    try:
        ir_v = ir(excess, n)
    except BacktestError:
        ir_v = float("nan")
    return BacktestResult(
        out_dates, excess, port_a, bench_a, cost_a, aer_v, ir_v, positions, ledger, snaps, config.initial_cash
    )
