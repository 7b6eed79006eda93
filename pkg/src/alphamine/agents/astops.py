"""Deterministic tree operators behind the mock backend: mutate, graft, repair, simplify."""

from __future__ import annotations

import random
import re
from collections import Counter

from .. import dsl
from ..dsl import (
    Binary,
    Column,
    Compare,
    ComplexityCaps,
    CsOp,
    Expr,
    Gate,
    TsCorr,
    TsOp,
    Unary,
)

MUTATION_KINDS = ("operator", "window", "column")

# operator families that can stand in for each other without changing arity
_SWAP_FAMILIES = {
    Unary: dsl.UNARY_FUNCS,
    Binary: dsl.BINARY_OPS,
    Compare: dsl.COMPARE_OPS,
    TsOp: dsl.TS_FUNCS,
    CsOp: dsl.CS_FUNCS,
}

_ALIASES = {
    "day_open": "open",
    "day_high": "high",
    "day_low": "low",
    "day_close": "close",
    "day_volume": "volume",
    "vol": "volume",
    "o": "open",
    "h": "high",
    "l": "low",
    "c": "close",
    "v": "volume",
}


def _sites(expr: Expr, kind: str) -> list[dsl.Path]:
    out = []
    for path, node in dsl.walk(expr):
        if kind == "operator" and type(node) in _SWAP_FAMILIES:
            out.append(path)
        elif kind == "window" and isinstance(node, (TsOp, TsCorr)):
            out.append(path)
        elif kind == "column" and isinstance(node, Column):
            out.append(path)
    return out


def _perturb_window(w: int, rng: random.Random, lo: int) -> int:
    new = int(round(w * (1.0 + rng.uniform(-0.25, 0.25))))
    if new == w:
        new = w + rng.choice((-1, 1))
    new = min(max(new, lo), dsl.MAX_WINDOW)
    if new == w:
        new = w + 1 if w < dsl.MAX_WINDOW else w - 1
    return new


def _edit(node: Expr, kind: str, rng: random.Random, columns) -> Expr:
    if kind == "operator":
        family = [op for op in _SWAP_FAMILIES[type(node)] if op != node.op]
        op = rng.choice(family)
        if isinstance(node, Unary):
            return Unary(op, node.arg)
        if isinstance(node, Binary):
            return Binary(op, node.left, node.right)
        if isinstance(node, Compare):
            return Compare(op, node.left, node.right)
        if isinstance(node, TsOp):
            return TsOp(op, node.arg, node.window)
        return CsOp(op, node.arg)
    if kind == "window":
        lo = 2 if isinstance(node, TsCorr) else dsl.MIN_WINDOW
        w = _perturb_window(node.window, rng, lo)
        if isinstance(node, TsCorr):
            return TsCorr(node.left, node.right, w)
        return TsOp(node.op, node.arg, w)
    others = [c for c in columns if c != node.name]
    return Column(rng.choice(others))


def mutate_ast(
    expr: Expr,
    rng: random.Random,
    caps: ComplexityCaps = ComplexityCaps(),
    columns=dsl.COLUMNS,
    tries: int = 10,
) -> Expr | None:
    """Change exactly one node: swap an operator within its family, nudge a window by up to 25%,
    or replace a column. The edit kind is drawn uniformly among applicable kinds, then the site."""
    for _ in range(tries):
        kinds = [k for k in MUTATION_KINDS if _sites(expr, k)]
        if not kinds:
            return None
        kind = rng.choice(kinds)
        path = rng.choice(_sites(expr, kind))
        out = dsl.replace_at(expr, path, _edit(dsl.get_at(expr, path), kind, rng, columns))
        if not dsl.validate(out, caps):
            return out
    return None


def crossover_ast(
    a: Expr,
    b: Expr,
    rng: random.Random,
    caps: ComplexityCaps = ComplexityCaps(),
    tries: int = 10,
) -> Expr | None:
    """Graft a uniformly chosen subtree of ``b`` onto a uniformly chosen site of ``a``.

    Gate conditions only swap with comparisons and vice versa. Returns ``None`` if no
    attempt stays within ``caps``.
    """
    donors = list(dsl.walk(b))
    for _ in range(tries):
        path, site = rng.choice(list(dsl.walk(a)))
        want_cmp = isinstance(site, Compare)
        pool = [n for _, n in donors if isinstance(n, Compare) == want_cmp]
        if not pool:
            continue
        out = dsl.replace_at(a, path, rng.choice(pool))
        if dsl.columns_used(out) and not dsl.validate(out, caps):
            return out
    return None


def node_multiset(expr: Expr) -> Counter:
    return Counter(dsl.node_label(n) for _, n in dsl.walk(expr))


def differing_nodes(a: Expr, b: Expr) -> int | None:
    """Number of nodes whose label differs between two same-shaped trees; ``None`` if shapes differ."""
    ka, kb = dsl.children(a), dsl.children(b)
    if type(a) is not type(b) or len(ka) != len(kb):
        return None
    total = int(dsl.node_label(a) != dsl.node_label(b))
    for x, y in zip(ka, kb):
        sub = differing_nodes(x, y)
        if sub is None:
            return None
        total += sub
    return total


# ------------------------------------------------------------------- repair


def _strip_redundant(expr: Expr) -> Expr:
    kids = tuple(_strip_redundant(k) for k in dsl.children(expr))
    node = dsl.with_children(expr, kids) if kids else expr
    if len(kids) == 1 and dsl._redundant(node, kids[0]):
        return kids[0]
    return node


def _shrink(expr: Expr, caps: ComplexityCaps) -> Expr | None:
    """Drop outermost step nodes (keeping their first argument) until within caps."""
    for _ in range(64):
        if not dsl.validate(expr, caps):
            return expr
        steps = [(p, n) for p, n in dsl.walk(expr) if isinstance(n, (TsOp, TsCorr, CsOp, Gate))]
        if not steps:
            return None
        path, node = steps[0]
        keep = node.then if isinstance(node, Gate) else dsl.children(node)[0]
        expr = dsl.replace_at(expr, path, keep)
    return None


def simplify_ast(expr: Expr, caps: ComplexityCaps = ComplexityCaps()) -> Expr | None:
    """Remove redundant stacking, then shrink until the caps hold."""
    out = _strip_redundant(expr)
    out = _shrink(out, caps)
    if out is None or not dsl.columns_used(out):
        return None
    return out


def _fix_text_once(text: str, err: dsl.DslError) -> str | None:
    if isinstance(err, dsl.BoundsError) and err.pos is not None:
        m = re.compile(r"[0-9.eE+-]+").match(text, err.pos)
        if m:
            try:
                w = int(round(float(m.group())))
            except ValueError:
                return None
            w = min(max(w, dsl.MIN_WINDOW), dsl.MAX_WINDOW)
            return text[: m.start()] + str(w) + text[m.end():]
        return None
    depth = 0
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
    if depth > 0:
        return text + ")" * depth
    if depth < 0:
        fixed = text
        for _ in range(-depth):
            i = fixed.rfind(")")
            fixed = fixed[:i] + fixed[i + 1:]
        return fixed
    lowered = text.lower()
    renamed = re.sub(r"[A-Za-z_][A-Za-z0-9_]*", lambda m: _ALIASES.get(m.group(), m.group()), lowered)
    if renamed != text:
        return renamed
    return None


def repair_text(text: str, caps: ComplexityCaps = ComplexityCaps(), max_passes: int = 8) -> str | None:
    """Rule-based fixer: clamp windows, balance parentheses, map column aliases,
    then strip redundant stacking and shrink to the caps."""
    current = text.strip()
    for _ in range(max_passes):
        try:
            expr = dsl.parse(current)
        except dsl.DslError as err:
            nxt = _fix_text_once(current, err)
            if nxt is None or nxt == current:
                return None
            current = nxt
            continue
        out = simplify_ast(expr, caps)
        return None if out is None else dsl.to_text(out)
    return None
