"""Alpha expression language: AST, lexer, parser, canonical printer, complexity.

Expressions are built from the five OHLCV columns, numeric constants,
arithmetic, a handful of elementwise functions, trailing time-series
operators, per-date cross-sectional operators and a three-arm ``gate``.
No production can look at a later row: every lag and window is a positive
integer counted backwards from the current row.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

COLUMNS = ("open", "high", "low", "close", "volume")
UNARY_FUNCS = ("abs", "log1p", "sign", "tanh", "sqrt", "neg")
TS_FUNCS = ("ts_mean", "ts_std", "ts_sum", "ts_min", "ts_max", "ts_rank", "delay", "delta")
CS_FUNCS = ("cs_rank", "cs_zscore")
BINARY_OPS = ("+", "-", "*", "/")
COMPARE_OPS = (">", "<")
MIN_WINDOW = 1
MAX_WINDOW = 252


class DslError(ValueError):
    """Base class for expression errors; ``pos`` is a 0-based character offset."""

    def __init__(self, message: str, pos: int | None = None):
        self.pos = pos
        self.detail = message
        super().__init__(message if pos is None else f"{message} at position {pos}")


class LexError(DslError):
    pass


class ParseError(DslError):
    def __init__(self, message: str, pos: int | None = None, expected: Sequence[str] = ()):
        self.expected = tuple(sorted(set(expected)))
        if self.expected:
            message = f"{message}; expected one of: {', '.join(self.expected)}"
        super().__init__(message, pos)


class BoundsError(DslError):
    pass


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Column:
    name: str


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class TsOp:
    op: str
    arg: "Expr"
    window: int


@dataclass(frozen=True)
class TsCorr:
    left: "Expr"
    right: "Expr"
    window: int


@dataclass(frozen=True)
class CsOp:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class Gate:
    cond: Compare
    then: "Expr"
    other: "Expr"


Expr = Union[Column, Const, Unary, Binary, Compare, TsOp, TsCorr, CsOp, Gate]


def children(node: Expr) -> tuple[Expr, ...]:
    if isinstance(node, (Column, Const)):
        return ()
    if isinstance(node, (Unary, TsOp, CsOp)):
        return (node.arg,)
    if isinstance(node, (Binary, Compare, TsCorr)):
        return (node.left, node.right)
    if isinstance(node, Gate):
        return (node.cond, node.then, node.other)
    raise TypeError(f"not an expression node: {node!r}")


def with_children(node: Expr, kids: Sequence[Expr]) -> Expr:
    """Copy of ``node`` with its children replaced (same arity)."""
    if isinstance(node, (Column, Const)):
        return node
    if isinstance(node, Unary):
        return Unary(node.op, kids[0])
    if isinstance(node, TsOp):
        return TsOp(node.op, kids[0], node.window)
    if isinstance(node, CsOp):
        return CsOp(node.op, kids[0])
    if isinstance(node, Binary):
        return Binary(node.op, kids[0], kids[1])
    if isinstance(node, Compare):
        return Compare(node.op, kids[0], kids[1])
    if isinstance(node, TsCorr):
        return TsCorr(kids[0], kids[1], node.window)
    if isinstance(node, Gate):
        if not isinstance(kids[0], Compare):
            raise TypeError("gate condition must be a comparison")
        return Gate(kids[0], kids[1], kids[2])
    raise TypeError(f"not an expression node: {node!r}")


def node_label(node: Expr) -> tuple:
    """Everything that identifies a node apart from its children."""
    if isinstance(node, Column):
        return ("col", node.name)
    if isinstance(node, Const):
        return ("const", node.value)
    if isinstance(node, (Unary, Binary, Compare, CsOp)):
        return (type(node).__name__, node.op)
    if isinstance(node, TsOp):
        return ("ts", node.op, node.window)
    if isinstance(node, TsCorr):
        return ("ts", "ts_corr", node.window)
    if isinstance(node, Gate):
        return ("gate",)
    raise TypeError(f"not an expression node: {node!r}")


Path = tuple[int, ...]


def walk(expr: Expr, path: Path = ()) -> Iterator[tuple[Path, Expr]]:
    """Pre-order traversal yielding ``(path, node)`` pairs."""
    yield path, expr
    for i, kid in enumerate(children(expr)):
        yield from walk(kid, path + (i,))


def postorder(expr: Expr) -> Iterator[Expr]:
    for kid in children(expr):
        yield from postorder(kid)
    yield expr


def get_at(expr: Expr, path: Path) -> Expr:
    for i in path:
        expr = children(expr)[i]
    return expr


def replace_at(expr: Expr, path: Path, new: Expr) -> Expr:
    if not path:
        return new
    kids = list(children(expr))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(expr, kids)


def columns_used(expr: Expr) -> set[str]:
    return {n.name for _, n in walk(expr) if isinstance(n, Column)}


# ------------------------------------------------------------------------- lexer


@dataclass(frozen=True)
class Token:
    kind: str  # NUMBER, IDENT, OP, EOF
    text: str
    pos: int


_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_PUNCT = set("+-*/(),<>")


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _PUNCT:
            tokens.append(Token("OP", ch, i))
            i += 1
            continue
        m = _NUMBER_RE.match(text, i)
        if m:
            end = m.end()
            if end < n and (text[end].isalpha() or text[end] == "_"):
                raise LexError(f"malformed number {text[i:end + 1]!r}", i)
            tokens.append(Token("NUMBER", m.group(), i))
            i = end
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            tokens.append(Token("IDENT", m.group().lower(), i))
            i = m.end()
            continue
        raise LexError(f"unexpected character {ch!r}", i)
    tokens.append(Token("EOF", "", n))
    return tokens


# ------------------------------------------------------------------------ parser


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> Token:
        if self.tok.kind == "OP" and self.tok.text == text:
            return self.advance()
        raise ParseError(f"unexpected {self._describe(self.tok)}", self.tok.pos, [repr(text)])

    @staticmethod
    def _describe(tok: Token) -> str:
        return "end of input" if tok.kind == "EOF" else repr(tok.text)

    def parse(self) -> Expr:
        expr = self.additive()
        if self.tok.kind != "EOF":
            raise ParseError(
                f"unexpected {self._describe(self.tok)}",
                self.tok.pos,
                ["'+'", "'-'", "'*'", "'/'", "end of input"],
            )
        return expr

    def additive(self) -> Expr:
        left = self.multiplicative()
        while self.tok.kind == "OP" and self.tok.text in "+-":
            op = self.advance().text
            left = Binary(op, left, self.multiplicative())
        return left

    def multiplicative(self) -> Expr:
        left = self.unary()
        while self.tok.kind == "OP" and self.tok.text in "*/":
            op = self.advance().text
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.tok.kind == "OP" and self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.primary()

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "NUMBER":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "OP" and tok.text == "(":
            self.advance()
            expr = self.additive()
            self.expect(")")
            return expr
        if tok.kind == "IDENT":
            self.advance()
            if self.tok.kind == "OP" and self.tok.text == "(":
                return self.call(tok)
            if tok.text in COLUMNS:
                return Column(tok.text)
            raise ParseError(f"unknown column {tok.text!r}", tok.pos, COLUMNS)
        raise ParseError(
            f"unexpected {self._describe(tok)}",
            tok.pos,
            ["number", "column", "function", "'('", "'-'"],
        )

    def window(self, name: str) -> int:
        tok = self.tok
        if tok.kind != "NUMBER":
            raise ParseError(f"{name} needs an integer window", tok.pos, ["integer"])
        if not tok.text.isdigit():
            raise BoundsError(f"window {tok.text!r} of {name} is not an integer", tok.pos)
        self.advance()
        value = int(tok.text)
        if not MIN_WINDOW <= value <= MAX_WINDOW:
            kind = "lag" if name in ("delay", "delta") else "window"
            side = "below minimum" if value < MIN_WINDOW else "above maximum"
            raise BoundsError(
                f"{kind} {value} of {name} {side} (allowed {MIN_WINDOW}..{MAX_WINDOW})", tok.pos
            )
        return value

    def call(self, name_tok: Token) -> Expr:
        name = name_tok.text
        self.expect("(")
        if name in UNARY_FUNCS:
            node: Expr = Unary(name, self.additive())
        elif name in CS_FUNCS:
            node = CsOp(name, self.additive())
        elif name in TS_FUNCS:
            arg = self.additive()
            self.expect(",")
            node = TsOp(name, arg, self.window(name))
        elif name == "ts_corr":
            left = self.additive()
            self.expect(",")
            right = self.additive()
            self.expect(",")
            node = TsCorr(left, right, self.window(name))
        elif name == "gate":
            cond = self.comparison()
            self.expect(",")
            then = self.additive()
            self.expect(",")
            node = Gate(cond, then, self.additive())
        else:
            known = UNARY_FUNCS + CS_FUNCS + TS_FUNCS + ("ts_corr", "gate")
            raise ParseError(f"unknown function {name!r}", name_tok.pos, known)
        self.expect(")")
        return node

    def comparison(self) -> Compare:
        left = self.additive()
        if not (self.tok.kind == "OP" and self.tok.text in COMPARE_OPS):
            raise ParseError(
                f"gate condition needs a comparison, got {self._describe(self.tok)}",
                self.tok.pos,
                ["'>'", "'<'"],
            )
        op = self.advance().text
        return Compare(op, left, self.additive())


def parse(text: str) -> Expr:
    """Parse expression text into an AST.

    Raises :class:`LexError`, :class:`ParseError` (with the expected-token
    set) or :class:`BoundsError` for windows/lags outside ``[1, 252]``.
    """
    return _Parser(text).parse()


# ----------------------------------------------------------------------- printer

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_ATOM = 1, 2, 3, 4


def _prec(node: Expr) -> int:
    if isinstance(node, Binary):
        return _PREC_ADD if node.op in "+-" else _PREC_MUL
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC_UNARY
    return _PREC_ATOM


def format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    text = repr(value)
    if "e" in text:
        mant, exp = text.split("e")
        sign = "-" if exp.startswith("-") else ""
        text = f"{mant}e{sign}{exp.lstrip('+-').lstrip('0') or '0'}"
    return text


def to_text(expr: Expr) -> str:
    """Canonical text: minimal parentheses, spaced binary operators."""
    if isinstance(expr, Column):
        return expr.name
    if isinstance(expr, Const):
        return format_number(expr.value)
    if isinstance(expr, Unary):
        if expr.op == "neg":
            inner = to_text(expr.arg)
            return f"-({inner})" if _prec(expr.arg) < _PREC_UNARY else f"-{inner}"
        return f"{expr.op}({to_text(expr.arg)})"
    if isinstance(expr, Binary):
        p = _prec(expr)
        left, right = to_text(expr.left), to_text(expr.right)
        if _prec(expr.left) < p:
            left = f"({left})"
        if _prec(expr.right) <= p:
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, Compare):
        return f"{to_text(expr.left)} {expr.op} {to_text(expr.right)}"
    if isinstance(expr, TsOp):
        return f"{expr.op}({to_text(expr.arg)}, {expr.window})"
    if isinstance(expr, TsCorr):
        return f"ts_corr({to_text(expr.left)}, {to_text(expr.right)}, {expr.window})"
    if isinstance(expr, CsOp):
        return f"{expr.op}({to_text(expr.arg)})"
    if isinstance(expr, Gate):
        return f"gate({to_text(expr.cond)}, {to_text(expr.then)}, {to_text(expr.other)})"
    raise TypeError(f"not an expression node: {expr!r}")


def canonical(text: str) -> str:
    return to_text(parse(text))


# -------------------------------------------------------------------- complexity


@dataclass(frozen=True)
class ComplexityReport:
    logical_steps: int
    node_count: int
    depth: int
    redundancy_flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ComplexityCaps:
    max_steps: int = 5
    max_nodes: int = 64
    max_depth: int = 12
    allow_redundancy: bool = False


def _is_step(node: Expr) -> bool:
    return isinstance(node, (TsOp, TsCorr, CsOp, Gate))


def _redundant(outer: Expr, inner: Expr) -> str | None:
    if isinstance(outer, CsOp) and isinstance(inner, CsOp) and outer.op == inner.op:
        return f"{outer.op}({inner.op}(...))"
    if (
        isinstance(outer, TsOp)
        and isinstance(inner, TsOp)
        and outer.op == inner.op == "ts_rank"
        and outer.window == inner.window
    ):
        return f"ts_rank(ts_rank(..., {inner.window}), {outer.window})"
    if isinstance(outer, Unary) and isinstance(inner, Unary) and outer.op == inner.op:
        if outer.op in ("abs", "sign"):
            return f"{outer.op}({inner.op}(...))"
    return None


def complexity(expr: Expr) -> ComplexityReport:
    steps = nodes = 0
    flags: list[str] = []

    def visit(node: Expr) -> int:
        nonlocal steps, nodes
        nodes += 1
        steps += _is_step(node)
        depth = 0
        for kid in children(node):
            flag = _redundant(node, kid)
            if flag:
                flags.append(flag)
            depth = max(depth, visit(kid))
        return depth + 1

    depth = visit(expr)
    return ComplexityReport(steps, nodes, depth, tuple(flags))


def validate(expr: Expr, caps: ComplexityCaps = ComplexityCaps()) -> list[str]:
    """Human-readable cap violations; empty when the expression is acceptable."""
    rep = complexity(expr)
    out = []
    if rep.logical_steps > caps.max_steps:
        out.append(f"logical steps {rep.logical_steps} > {caps.max_steps}")
    if rep.node_count > caps.max_nodes:
        out.append(f"node count {rep.node_count} > {caps.max_nodes}")
    if rep.depth > caps.max_depth:
        out.append(f"depth {rep.depth} > {caps.max_depth}")
    if not caps.allow_redundancy:
        out.extend(f"redundant stacking: {flag}" for flag in rep.redundancy_flags)
    return out


# ----------------------------------------------------------------------- sampler


@dataclass
class Sampler:
    """Random grammar-valid expressions within complexity caps."""

    caps: ComplexityCaps = field(default_factory=ComplexityCaps)
    columns: Sequence[str] = COLUMNS
    windows: Sequence[int] = (2, 3, 5, 10, 20)
    max_depth: int = 5

    def sample(self, rng: random.Random) -> Expr:
        for _ in range(200):
            expr = self._node(rng, 1)
            if columns_used(expr) and not validate(expr, self.caps):
                return expr
        return Column(rng.choice(list(self.columns)))

    def _leaf(self, rng: random.Random) -> Expr:
        if rng.random() < 0.15:
            return Const(rng.choice((1.0, 2.0, 0.5, 1e-9, 10.0)))
        return Column(rng.choice(list(self.columns)))

    def _node(self, rng: random.Random, depth: int) -> Expr:
        if depth >= self.max_depth or rng.random() < 0.12 + 0.16 * depth:
            return self._leaf(rng)
        d = depth + 1
        kind = rng.choices(
            ("binary", "unary", "ts", "corr", "cs", "gate"), weights=(34, 12, 28, 4, 16, 6)
        )[0]
        if kind == "binary":
            return Binary(rng.choice(BINARY_OPS), self._node(rng, d), self._node(rng, d))
        if kind == "unary":
            return Unary(rng.choice(UNARY_FUNCS), self._node(rng, d))
        if kind == "ts":
            return TsOp(rng.choice(TS_FUNCS), self._node(rng, d), rng.choice(list(self.windows)))
        if kind == "corr":
            w = max(2, rng.choice(list(self.windows)))
            return TsCorr(self._node(rng, d), self._node(rng, d), w)
        if kind == "cs":
            return CsOp(rng.choice(CS_FUNCS), self._node(rng, d))
        cond = Compare(rng.choice(COMPARE_OPS), self._node(rng, d + 1), self._node(rng, d + 1))
        return Gate(cond, self._node(rng, d), self._node(rng, d))
