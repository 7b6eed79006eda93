"""Vectorised evaluation of alpha expressions over an OHLCV panel.

Every operator computes row ``t`` from rows ``<= t`` only, with a fixed
accumulation order, so evaluating on a date prefix reproduces the full
evaluation bit for bit. :func:`causality_check` relies on that.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import dsl
from .dsl import Binary, Column, Compare, ComplexityCaps, Const, CsOp, Expr, Gate, TsCorr, TsOp, Unary
from .panel import FactorMatrix, OhlcvPanel, prefix


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalOptions:
    epsilon: float = 1e-12
    min_window_fill: float = 1.0
    caps: ComplexityCaps = field(default_factory=ComplexityCaps)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not 0 < self.min_window_fill <= 1:
            raise ValueError("min_window_fill must lie in (0, 1]")


def _clean(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a[~np.isfinite(a)] = np.nan
    return a


def _lag(x: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return x
    out = np.full_like(x, np.nan)
    if k < len(x):
        out[k:] = x[:-k]
    return out


class Evaluator:
    """Expression evaluator. Subclass and override an ``op_*`` method to get a variant."""

    def __init__(self, opts: EvalOptions | None = None):
        self.opts = opts or EvalOptions()

    # -- entry points

    def evaluate(self, expr: Expr, panel: OhlcvPanel) -> FactorMatrix:
        problems = dsl.validate(expr, self.opts.caps)
        if problems:
            raise EvalError("expression exceeds complexity caps: " + "; ".join(problems))
        return FactorMatrix(panel.dates, panel.tickers, self.values(expr, panel))

    def values(self, expr: Expr, panel: OhlcvPanel, cache: dict | None = None) -> np.ndarray:
        cache = {} if cache is None else cache
        if expr in cache:
            return cache[expr]
        with np.errstate(all="ignore"):
            out = _clean(self._dispatch(expr, panel, cache))
        cache[expr] = out
        return out

    def _dispatch(self, node: Expr, panel: OhlcvPanel, cache: dict) -> np.ndarray:
        if isinstance(node, Column):
            return panel.field(node.name).copy()
        if isinstance(node, Const):
            return np.full(panel.shape, node.value)
        if isinstance(node, Unary):
            return self.op_unary(node.op, self.values(node.arg, panel, cache))
        if isinstance(node, Binary):
            a = self.values(node.left, panel, cache)
            b = self.values(node.right, panel, cache)
            return self.op_binary(node.op, a, b)
        if isinstance(node, Compare):
            a = self.values(node.left, panel, cache)
            b = self.values(node.right, panel, cache)
            out = (a > b) if node.op == ">" else (a < b)
            out = out.astype(float)
            out[np.isnan(a) | np.isnan(b)] = np.nan
            return out
        if isinstance(node, Gate):
            cond = self.values(node.cond, panel, cache)
            then = self.values(node.then, panel, cache)
            other = self.values(node.other, panel, cache)
            out = np.where(cond == 1.0, then, other)
            out[np.isnan(cond)] = np.nan
            return out
        if isinstance(node, TsOp):
            return self.op_ts(node.op, self.values(node.arg, panel, cache), node.window)
        if isinstance(node, TsCorr):
            x = self.values(node.left, panel, cache)
            y = self.values(node.right, panel, cache)
            return self.op_ts_corr(x, y, node.window)
        if isinstance(node, CsOp):
            x = self.values(node.arg, panel, cache)
            return self.op_cs_rank(x) if node.op == "cs_rank" else self.op_cs_zscore(x)
        raise TypeError(f"not an expression node: {node!r}")

    # -- elementwise

    def op_unary(self, op: str, a: np.ndarray) -> np.ndarray:
        if op == "neg":
            return -a
        if op == "abs":
            return np.abs(a)
        if op == "sign":
            return np.sign(a)
        if op == "tanh":
            return np.tanh(a)
        if op == "log1p":
            return np.where(a > -1.0, np.log1p(np.where(a > -1.0, a, 0.0)), np.nan)
        if op == "sqrt":
            return np.where(a >= 0.0, np.sqrt(np.abs(a)), np.nan)
        raise EvalError(f"unknown unary op {op}")

    def op_binary(self, op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            # sign-symmetric guard: a*b / (b^2 + eps)
            return a * b / (b * b + self.opts.epsilon)
        raise EvalError(f"unknown binary op {op}")

    # -- time series

    def _required(self, w: int) -> int:
        return max(1, math.ceil(self.opts.min_window_fill * w - 1e-12))

    def _full_rows(self, shape: tuple[int, int], w: int) -> np.ndarray:
        rows = np.arange(shape[0])[:, None] >= w - 1
        return np.broadcast_to(rows, shape)

    def _window_sum(self, x: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
        acc = np.zeros_like(x)
        cnt = np.zeros_like(x)
        for k in range(w):
            v = _lag(x, k)
            present = ~np.isnan(v)
            acc += np.where(present, v, 0.0)
            cnt += present
        return acc, cnt

    def op_ts(self, op: str, x: np.ndarray, w: int) -> np.ndarray:
        if op == "delay":
            return _lag(x, w)
        if op == "delta":
            return x - _lag(x, w)
        need = self._required(w)
        full = self._full_rows(x.shape, w)
        if op in ("ts_sum", "ts_mean", "ts_std"):
            acc, cnt = self._window_sum(x, w)
            if op == "ts_sum":
                out = acc
            else:
                mean = acc / np.maximum(cnt, 1)
                if op == "ts_mean":
                    out = mean
                else:
                    ss = np.zeros_like(x)
                    for k in range(w):
                        v = _lag(x, k)
                        ss += np.where(np.isnan(v), 0.0, (v - mean) ** 2)
                    out = np.sqrt(ss / (cnt - 1))
                    out[cnt < 2] = np.nan
            return np.where(full & (cnt >= need), out, np.nan)
        if op in ("ts_min", "ts_max"):
            reduce = np.fmin if op == "ts_min" else np.fmax
            out = np.full_like(x, np.nan)
            cnt = np.zeros_like(x)
            for k in range(w):
                v = _lag(x, k)
                out = reduce(out, v)
                cnt += ~np.isnan(v)
            return np.where(full & (cnt >= need), out, np.nan)
        if op == "ts_rank":
            less = np.zeros_like(x)
            equal = np.zeros_like(x)
            cnt = np.zeros_like(x)
            for k in range(w):
                v = _lag(x, k)
                less += v < x
                equal += v == x
                cnt += ~np.isnan(v)
            # average 1-based rank of today's value inside the window, scaled to [0, 1]
            rank = less + (equal + 1.0) / 2.0
            out = np.where(cnt > 1, (rank - 1.0) / np.maximum(cnt - 1.0, 1.0), 0.5)
            return np.where(full & (cnt >= need) & ~np.isnan(x), out, np.nan)
        raise EvalError(f"unknown time-series op {op}")

    def op_ts_corr(self, x: np.ndarray, y: np.ndarray, w: int) -> np.ndarray:
        need = self._required(w)
        full = self._full_rows(x.shape, w)
        sx = np.zeros_like(x)
        sy = np.zeros_like(x)
        cnt = np.zeros_like(x)
        for k in range(w):
            a, b = _lag(x, k), _lag(y, k)
            both = ~(np.isnan(a) | np.isnan(b))
            sx += np.where(both, a, 0.0)
            sy += np.where(both, b, 0.0)
            cnt += both
        n = np.maximum(cnt, 1)
        mx, my = sx / n, sy / n
        cxy = np.zeros_like(x)
        cxx = np.zeros_like(x)
        cyy = np.zeros_like(x)
        for k in range(w):
            a, b = _lag(x, k), _lag(y, k)
            both = ~(np.isnan(a) | np.isnan(b))
            da = np.where(both, a - mx, 0.0)
            db = np.where(both, b - my, 0.0)
            cxy += da * db
            cxx += da * da
            cyy += db * db
        out = cxy / np.sqrt(cxx * cyy)
        ok = full & (cnt >= max(need, 2)) & (cxx > 0) & (cyy > 0)
        return np.where(ok, np.clip(out, -1.0, 1.0), np.nan)

    # -- cross section

    def op_cs_rank(self, x: np.ndarray) -> np.ndarray:
        n = np.sum(~np.isnan(x), axis=1, keepdims=True)
        if x.size == 0:
            return x.copy()
        ranks = rankdata(x, axis=1, nan_policy="omit")
        out = (ranks - 1.0) / np.maximum(n - 1.0, 1.0)
        return np.where(n >= 2, out, np.nan)

    def _row_moments(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        acc = np.zeros(x.shape[0])
        cnt = np.zeros(x.shape[0])
        for j in range(x.shape[1]):
            col = x[:, j]
            present = ~np.isnan(col)
            acc += np.where(present, col, 0.0)
            cnt += present
        mean = acc / np.maximum(cnt, 1)
        ss = np.zeros(x.shape[0])
        for j in range(x.shape[1]):
            col = x[:, j]
            ss += np.where(np.isnan(col), 0.0, (col - mean) ** 2)
        std = np.sqrt(ss / (cnt - 1))
        return mean, std, cnt

    def op_cs_zscore(self, x: np.ndarray) -> np.ndarray:
        mean, std, cnt = self._row_moments(x)
        out = (x - mean[:, None]) / std[:, None]
        ok = (cnt >= 2) & (std > 0)
        return np.where(ok[:, None], out, np.nan)


_DEFAULT = Evaluator()


def evaluate(expr: Expr, panel: OhlcvPanel, opts: EvalOptions | None = None) -> FactorMatrix:
    evaluator = _DEFAULT if opts is None else Evaluator(opts)
    return evaluator.evaluate(expr, panel)


def nan_ratio(factor: FactorMatrix | np.ndarray) -> float:
    values = factor.values if isinstance(factor, FactorMatrix) else np.asarray(factor)
    if values.size == 0:
        raise EvalError("nan_ratio of an empty matrix")
    return float(np.count_nonzero(np.isnan(values)) / values.size)


# ---------------------------------------------------------------------- leakage


@dataclass(frozen=True)
class CausalityResult:
    passed: bool
    cutoffs: tuple[str, ...] = ()
    date: str | None = None
    ticker: str | None = None
    subterm: str | None = None

    @property
    def report(self) -> str:
        if self.passed:
            return "prefix-consistent"
        return (
            f"value at ({self.date}, {self.ticker}) changes when later dates are added; "
            f"first leaking subterm: {self.subterm}"
        )

    def __bool__(self) -> bool:
        return self.passed


def _bit_equal(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    both_nan = np.isnan(a) & np.isnan(b)
    same = (a == b) & (np.signbit(a) == np.signbit(b))
    return both_nan | same


def causality_check(
    expr: Expr,
    panel: OhlcvPanel,
    probe_count: int,
    seed: int,
    evaluator: Evaluator | None = None,
) -> CausalityResult:
    """Check that truncating the panel at random cutoffs never changes past values.

    For each probed cutoff ``t`` the expression is evaluated on the prefix
    ending at ``t`` and compared bit-exactly with the full evaluation
    restricted to dates ``<= t``. On failure the innermost subterm whose
    values differ is reported.
    """
    if len(panel.dates) < 3:
        raise ValueError("causality_check needs at least 3 dates")
    evaluator = evaluator or _DEFAULT
    if probe_count <= 0:
        return CausalityResult(True)
    rng = random.Random(seed)
    # the last date is the identity prefix, so probe strictly earlier cutoffs
    picks = sorted(rng.sample(range(len(panel.dates) - 1), min(probe_count, len(panel.dates) - 1)))
    full_cache: dict = {}
    full = evaluator.values(expr, panel, full_cache)
    cut_names = tuple(str(panel.dates[t]) for t in picks)
    for t in picks:
        sub = prefix(panel, panel.dates[t])
        sub_cache: dict = {}
        part = evaluator.values(expr, sub, sub_cache)
        if _bit_equal(full[: t + 1], part).all():
            continue
        for node in dsl.postorder(expr):
            a = evaluator.values(node, panel, full_cache)[: t + 1]
            b = evaluator.values(node, sub, sub_cache)
            diff = ~_bit_equal(a, b)
            if diff.any():
                r, c = map(int, np.argwhere(diff)[0])
                return CausalityResult(
                    False, cut_names, str(panel.dates[r]), panel.tickers[c], dsl.to_text(node)
                )
    return CausalityResult(True, cut_names)
