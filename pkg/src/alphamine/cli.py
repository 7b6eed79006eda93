"""Command-line entry point.

Exit codes: 0 success, 1 usage or invalid input, 2 data error, 3 backend failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsl
from .agents.backends import BackendError, HttpBackend, LlmBackend, MockBackend
from .backtest import BacktestError, StrategyConfig, combine, simulate
from .config import BackendConfig, ConfigError, RunConfig
from .evaluation import EvalError, evaluate, nan_ratio
from .evolve import EvolutionConfig, RunAborted, read_archive, run
from .fitness import FitnessError, compute_fitness
from .panel import LabelMatrix, PanelError, forward_return, load_csv, synth_panel, write_csv

log = logging.getLogger("alphamine")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3

METRIC_COLUMNS = (
    "generation", "subcycle", "step", "cohort", "qualified", "elite", "parents",
    "best_ic", "mean_ic", "best_icir", "best_rank_ic", "mean_rank_ic", "best_rank_icir", "mi_best",
)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------- helpers


def _load_panel(path: str):
    if not Path(path).is_file():
        raise DataError(f"data file not found: {path}")
    return load_csv(path)


def _threshold_pair(text: str) -> tuple[float, float]:
    try:
        q, e = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated percentiles, got {text!r}") from None
    return q, e


def _unit_interval(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 <= x <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {x}")
    return x


def make_backend(cfg: BackendConfig, seed: int) -> LlmBackend:
    if cfg.kind == "mock":
        return MockBackend(seed, defect_rate=cfg.defect_rate, max_in_flight=cfg.max_in_flight)
    return HttpBackend(cfg.base_url, cfg.model, cfg.api_key_env, cfg.timeout, cfg.retries, cfg.max_in_flight,
                       cfg.backoff)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# --------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    panel = synth_panel(args.seed, args.dates, args.tickers, args.signal, horizon=args.horizon)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_csv(panel, out)
    except OSError as err:
        raise DataError(f"cannot write {out}: {err}") from err
    print(f"wrote {args.dates * args.tickers} rows to {out}")
    return EXIT_OK


def _effective_config(args) -> RunConfig:
    cfg = RunConfig.read(args.config) if args.config else RunConfig()
    evo = cfg.evolution
    changes: dict = {}
    if args.generations is not None:
        scaled = EvolutionConfig.scaled(args.generations)
        changes.update(generations=scaled.generations, subcycles=scaled.subcycles,
                       gens_per_subcycle=scaled.gens_per_subcycle)
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.thresholds is not None:
        q, e = args.thresholds
        try:
            changes["thresholds"] = dataclasses.replace(evo.thresholds, qualified_percentile=q, elite_percentile=e)
        except ValueError as err:
            raise ConfigError(f"invalid --thresholds: {err}") from err
    if args.threads is not None:
        changes["workers"] = args.threads
    try:
        evo = dataclasses.replace(evo, **changes)
    except ValueError as err:
        raise ConfigError(f"invalid evolution settings: {err}") from err
    backend = cfg.backend
    if args.backend is not None:
        backend = dataclasses.replace(backend, kind=args.backend)
    if args.threads is not None:
        backend = dataclasses.replace(backend, max_in_flight=args.threads)
    return dataclasses.replace(
        cfg, evolution=evo, backend=backend,
        data=args.data or cfg.data, output_dir=args.out or cfg.output_dir,
    )


def cmd_mine(args) -> int:
    cfg = _effective_config(args)
    if not cfg.data:
        raise UsageError("no data file: pass --data or set 'data' in the config")
    panel = _load_panel(cfg.data)
    labels = forward_return(panel, cfg.horizon)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.json")
    backend = make_backend(cfg.backend, cfg.evolution.seed)
    seeds = [line.strip() for line in Path(args.seed_file).read_text().splitlines() if line.strip()] \
        if args.seed_file else []
    try:
        runlog = run(cfg.evolution, panel, labels, backend=backend, eval_options=cfg.eval,
                     seed_exprs=seeds, log_path=out / "run_log.jsonl")
    except RunAborted as err:
        err.log.write_archive(out / "elites.jsonl")
        print(f"run aborted: {err}; partial log in {out / 'run_log.jsonl'}", file=sys.stderr)
        return EXIT_BACKEND
    runlog.write_archive(out / "elites.jsonl")
    print(f"{len(runlog.records)} generation records, {len(runlog.archive)} elites -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    text = args.expr if args.expr is not None else Path(args.expr_file).read_text().strip()
    expr = dsl.parse(text)
    panel = _load_panel(args.data)
    labels = forward_return(panel, args.horizon)
    factor = evaluate(expr, panel)
    report = compute_fitness(factor, labels, args.bins, nan_ratio(factor))
    out = {"expr": dsl.to_text(expr), **report.to_dict()}
    del out["classification"]
    _print_json(out)
    return EXIT_OK


def cmd_backtest(args) -> int:
    if not Path(args.archive).is_file():
        raise DataError(f"archive not found: {args.archive}")
    entries = read_archive(args.archive)
    if not entries:
        raise UsageError(f"archive {args.archive} is empty")
    panel = _load_panel(args.data)
    labels = forward_return(panel, args.horizon)
    split = np.datetime64(args.train_split, "D")
    test_rows = np.flatnonzero(panel.dates > split)
    if panel.dates[0] > split or len(test_rows) < 3:
        raise UsageError("--train-split must leave at least one training date and three test dates")
    strategy = StrategyConfig(
        top_k=args.top_k, drop_n=args.drop_n, buy_cost=args.buy_cost, sell_cost=args.sell_cost,
        min_fee=args.min_fee, initial_cash=args.initial_cash,
    )
    # training signs may only see returns that settle on or before the split
    last_train = int(test_rows[0]) - 1
    train_labels = labels.values.copy()
    train_labels[max(last_train - args.horizon, 0):] = np.nan
    labels = LabelMatrix(labels.dates, labels.tickers, train_labels, labels.horizon)
    scores = combine([e.expr for e in entries], panel, labels, (panel.dates[0], split))
    test = slice(int(test_rows[0]), len(panel.dates))
    test_panel = panel.take_dates(test)
    test_scores = dataclasses.replace(scores, dates=test_panel.dates, values=scores.values[test])
    result = simulate(test_scores, test_panel, strategy)
    result.write(args.out)
    _print_json(result.summary())
    return EXIT_OK


def _read_log(path: Path) -> tuple[list[dict], int]:
    records, bad = [], 0
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if not isinstance(rec, dict):
                raise ValueError("not an object")
        except ValueError as err:
            bad += 1
            print(f"warning: {path}:{lineno}: skipping corrupted line ({err})", file=sys.stderr)
            continue
        records.append(rec)
    return records, bad


def cmd_report(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise DataError(f"log not found: {path}")
    records, bad = _read_log(path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "generation_metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for rec in records:
            w.writerow(["" if rec.get(c) is None else rec.get(c) for c in METRIC_COLUMNS])
    totals: dict[str, int] = {}
    for rec in records:
        for stage, n in (rec.get("rejects_by_stage") or {}).items():
            totals[stage] = totals.get(stage, 0) + int(n)
    with (out / "rejection_stages.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "count"])
        for stage in sorted(totals):
            w.writerow([stage, totals[stage]])
    if args.backtest:
        _cumulative(Path(args.backtest), out)
    print(f"{len(records)} records, {bad} corrupted lines skipped -> {out}")
    return EXIT_OK


def _cumulative(bt_dir: Path, out: Path) -> None:
    src = bt_dir / "daily_excess.csv"
    if not src.is_file():
        raise DataError(f"no daily_excess.csv in {bt_dir}")
    with src.open() as fh, (out / "cumulative_excess.csv").open("w", newline="") as dst:
        w = csv.writer(dst, lineterminator="\n")
        w.writerow(["date", "cumulative_excess", "cumulative_portfolio", "cumulative_benchmark"])
        acc = [0.0, 0.0, 0.0]
        for row in csv.DictReader(fh):
            acc[0] += float(row["excess"])
            acc[1] += float(row["portfolio_return"])
            acc[2] += float(row["benchmark_return"])
            w.writerow([row["date"], *(repr(x) for x in acc)])


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="alphamine", description="Evolutionary alpha-factor mining over OHLCV panels.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic OHLCV panel with a planted signal")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--dates", type=int, default=250)
    s.add_argument("--tickers", type=int, default=50)
    s.add_argument("--signal", type=_unit_interval, default=0.8, help="target correlation of the planted signal")
    s.add_argument("--horizon", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("mine", help="run the evolutionary search")
    m.add_argument("--config", help="JSON run configuration")
    m.add_argument("--data", help="OHLCV CSV (overrides the config)")
    m.add_argument("--out", help="output directory (overrides the config)")
    m.add_argument("--generations", type=int, help="compress the default schedule to this many generations")
    m.add_argument("--seed", type=int)
    m.add_argument("--thresholds", type=_threshold_pair, metavar="Q,E",
                   help="qualified and elite percentiles, e.g. 80,90")
    m.add_argument("--threads", type=int, help="worker and in-flight request bound")
    m.add_argument("--backend", choices=("mock", "http"))
    m.add_argument("--seed-file", help="file with one seed expression per line")
    m.set_defaults(func=cmd_mine)

    e = sub.add_parser("eval", help="print the fitness of one expression")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--expr")
    g.add_argument("--expr-file")
    e.add_argument("--data", required=True)
    e.add_argument("--horizon", type=int, default=10)
    e.add_argument("--bins", type=int, default=16)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("backtest", help="combine archived elites and simulate the top-k / drop-n strategy")
    b.add_argument("--archive", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--train-split", required=True, help="last training date (YYYY-MM-DD)")
    b.add_argument("--out", required=True)
    b.add_argument("--horizon", type=int, default=10)
    d = StrategyConfig()
    b.add_argument("--top-k", type=int, default=d.top_k)
    b.add_argument("--drop-n", type=int, default=d.drop_n)
    b.add_argument("--buy-cost", type=float, default=d.buy_cost)
    b.add_argument("--sell-cost", type=float, default=d.sell_cost)
    b.add_argument("--min-fee", type=float, default=d.min_fee)
    b.add_argument("--initial-cash", type=float, default=d.initial_cash)
    b.set_defaults(func=cmd_backtest)

    r = sub.add_parser("report", help="tabulate a run log")
    r.add_argument("--log", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--backtest", help="backtest output directory to add a cumulative-return table")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, dsl.DslError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        if isinstance(err, (PanelError, FitnessError, BacktestError, EvalError)):
            print(f"data error: {err}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as err:
        print(f"backend error: {err}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
