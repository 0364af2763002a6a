"""Line-oriented model DSL and override-file reader/writer.

Model files::

    MODEL name
    STOCK s INIT <expr>
    FLOW f [INTO s] [OUTOF s] = <expr>
    AUX a = <expr>
    CONST c = <number>
    TABLE t = (x, y) (x, y) ...

Override files hold ``name = number`` (replace) or ``name *= number``
(scale) lines. ``#`` starts a comment in both formats.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .expr import BUILTINS, BinOp, Call, Lookup, Neg, Num, Ref
from .model import IDENT_RE, AUX, CONST, FLOW, STOCK, Model, OverrideSet, Scale, Set, Variable

KEYWORDS = {"MODEL", "STOCK", "INIT", "FLOW", "INTO", "OUTOF", "AUX", "CONST", "TABLE"}
MAX_DEPTH = 100  # nesting levels; about five Python frames each

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\f\v]+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*=|[-+*/^(),=])"
)


class ParseError(Exception):
    def __init__(self, line, column, message, token=""):
        self.line = line
        self.column = column
        self.message = message
        self.token = token
        where = f"line {line}, column {column}"
        super().__init__(f"{where}: {message}" + (f" (at {token!r})" if token else ""))


@dataclass(frozen=True)
class Token:
    kind: str  # num, ident, op, end
    text: str
    line: int
    column: int


def _tokenize_line(text, lineno):
    text = text.split("#", 1)[0]
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(lineno, pos + 1, "unexpected character", text[pos])
        if m.lastgroup != "ws":
            out.append(Token(m.lastgroup, m.group(), lineno, pos + 1))
        pos = m.end()
    out.append(Token("end", "", lineno, len(text.rstrip()) + 1))
    return out


def _logical_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize_line(raw, lineno)
        if len(tokens) > 1:
            yield lineno, tokens


class _Cursor:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        if tok.kind != "end":
            self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.tok
        return ParseError(tok.line, tok.column, message, tok.text or "end of line")

    def expect_op(self, op):
        if self.tok.kind == "op" and self.tok.text == op:
            return self.advance()
        raise self.error(f"expected {op!r}")

    def expect_keyword(self, word):
        if self.tok.kind == "ident" and self.tok.text == word:
            return self.advance()
        raise self.error(f"expected {word}")

    def ident(self, what="identifier"):
        tok = self.tok
        if tok.kind != "ident":
            raise self.error(f"expected {what}")
        if tok.text in KEYWORDS or tok.text in BUILTINS:
            raise self.error(f"reserved word cannot be used as {what}")
        return self.advance().text

    def number(self):
        negative = False
        if self.tok.kind == "op" and self.tok.text in "+-":
            negative = self.advance().text == "-"
        if self.tok.kind != "num":
            raise self.error("expected number")
        value = float(self.advance().text)
        if not math.isfinite(value):
            raise self.error("number out of range", self.tokens[self.i - 1])
        return -value if negative else value

    def end(self):
        if self.tok.kind != "end":
            raise self.error("unexpected token")


class _ExprParser:
    """Recursive descent: ^ binds tighter than unary minus, then * /, then + -."""

    def __init__(self, cur: _Cursor):
        self.cur = cur
        self.depth = 0

    def parse(self):
        return self.additive()

    def _enter(self):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise self.cur.error("expression nested too deeply")

    def additive(self):
        left = self.multiplicative()
        while self.cur.tok.kind == "op" and self.cur.tok.text in ("+", "-"):
            op = self.cur.advance().text
            left = BinOp(op, left, self.multiplicative())
        return left

    def multiplicative(self):
        left = self.unary()
        while self.cur.tok.kind == "op" and self.cur.tok.text in ("*", "/"):
            op = self.cur.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.cur.tok.kind == "op" and self.cur.tok.text == "-":
            self.cur.advance()
            self._enter()
            node = Neg(self.unary())
            self.depth -= 1
            return node
        return self.power()

    def power(self):
        base = self.primary()
        if self.cur.tok.kind == "op" and self.cur.tok.text == "^":
            self.cur.advance()
            self._enter()
            exponent = self.unary()
            self.depth -= 1
            return BinOp("^", base, exponent)
        return base

    def primary(self):
        tok = self.cur.tok
        if tok.kind == "num":
            self.cur.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise self.cur.error("number out of range", tok)
            return Num(value)
        if tok.kind == "op" and tok.text == "(":
            self.cur.advance()
            self._enter()
            node = self.additive()
            self.depth -= 1
            self.cur.expect_op(")")
            return node
        if tok.kind == "ident":
            nxt = self.cur.tokens[self.cur.i + 1]
            if nxt.kind == "op" and nxt.text == "(":
                return self.call()
            if tok.text in KEYWORDS or tok.text in BUILTINS:
                raise self.cur.error("reserved word in expression")
            self.cur.advance()
            return Ref(tok.text)
        raise self.cur.error("expected expression")

    def call(self):
        tok = self.cur.advance()
        if tok.text not in BUILTINS:
            raise self.cur.error(f"unknown builtin {tok.text}", tok)
        self.cur.expect_op("(")
        self._enter()
        if tok.text == "LOOKUP":
            table = self.cur.ident("table name")
            self.cur.expect_op(",")
            args = [table, self.additive()]
        else:
            args = [self.additive()]
            while self.cur.tok.kind == "op" and self.cur.tok.text == ",":
                self.cur.advance()
                args.append(self.additive())
        self.depth -= 1
        close = self.cur.tok
        self.cur.expect_op(")")
        if len(args) != BUILTINS[tok.text]:
            raise ParseError(
                close.line, close.column,
                f"{tok.text} expects {BUILTINS[tok.text]} arguments, got {len(args)}", ")",
            )
        if tok.text == "LOOKUP":
            return Lookup(args[0], args[1])
        return Call(tok.text, tuple(args))


def parse_expression(text: str, line: int = 1) -> object:
    cur = _Cursor(_tokenize_line(text, line))
    node = _ExprParser(cur).parse()
    cur.end()
    return node


def parse_model(text: str) -> Model:
    """Parse model DSL text; raises ParseError on the first defect."""
    if not isinstance(text, str):
        raise TypeError("model text must be str")
    name = None
    variables = {}
    tables = {}
    lines = _logical_lines(text)
    for lineno, tokens in lines:
        cur = _Cursor(tokens)
        head = cur.tok
        if name is None:
            cur.expect_keyword("MODEL")
            name = cur.ident("model name")
            cur.end()
            continue
        if head.kind != "ident" or head.text not in ("STOCK", "FLOW", "AUX", "CONST", "TABLE"):
            raise cur.error("expected STOCK, FLOW, AUX, CONST or TABLE")
        cur.advance()
        id_tok = cur.tok
        ident = cur.ident()
        if ident in variables or ident in tables:
            raise ParseError(id_tok.line, id_tok.column, f"duplicate definition of {ident}", ident)
        if head.text == "STOCK":
            cur.expect_keyword("INIT")
            variables[ident] = Variable(ident, STOCK, initial=_ExprParser(cur).parse())
        elif head.text == "FLOW":
            into = outof = None
            if cur.tok.kind == "ident" and cur.tok.text == "INTO":
                cur.advance()
                into = cur.ident("stock name")
            if cur.tok.kind == "ident" and cur.tok.text == "OUTOF":
                cur.advance()
                outof = cur.ident("stock name")
            if into is None and outof is None:
                raise cur.error("flow needs INTO and/or OUTOF")
            cur.expect_op("=")
            variables[ident] = Variable(ident, FLOW, equation=_ExprParser(cur).parse(), into=into, outof=outof)
        elif head.text == "AUX":
            cur.expect_op("=")
            variables[ident] = Variable(ident, AUX, equation=_ExprParser(cur).parse())
        elif head.text == "CONST":
            cur.expect_op("=")
            variables[ident] = Variable(ident, CONST, value=cur.number())
        else:
            cur.expect_op("=")
            points = []
            while cur.tok.kind == "op" and cur.tok.text == "(":
                cur.advance()
                x = cur.number()
                cur.expect_op(",")
                y = cur.number()
                cur.expect_op(")")
                points.append((x, y))
            if len(points) < 2:
                raise cur.error("table needs at least two (x, y) points")
            if any(b[0] <= a[0] for a, b in zip(points, points[1:])):
                raise ParseError(head.line, head.column, f"table {ident}: x values must strictly increase", ident)
            tables[ident] = tuple(points)
        cur.end()
    if name is None:
        raise ParseError(1, 1, "expected MODEL header", "end of input")
    return Model(name, variables, tables)


# ---------------------------------------------------------------------------
# serialization

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_number(value: float) -> str:
    """Shortest round-trip decimal form."""
    text = repr(float(value))
    return "0.0" if text == "-0.0" else text


def _fmt(expr, parent=0, right=False):
    """Render with minimal parentheses. Levels: 1 +-, 2 */, 3 unary, 4 ^, 5 atom."""
    if isinstance(expr, Num):
        if expr.value < 0 or (expr.value == 0 and math.copysign(1, expr.value) < 0):
            return _fmt(Neg(Num(-expr.value)), parent, right)
        return format_number(expr.value)
    if isinstance(expr, Ref):
        return expr.name
    if isinstance(expr, Lookup):
        return f"LOOKUP({expr.table}, {_fmt(expr.arg)})"
    if isinstance(expr, Call):
        return f"{expr.name}(" + ", ".join(_fmt(a) for a in expr.args) + ")"
    if isinstance(expr, Neg):
        text = "-" + _fmt(expr.operand, 3)
        # unary minus is allowed as an exponent or operand of * / without parens
        # only where the grammar reaches unary; elsewhere wrap it
        return f"({text})" if parent > 3 and not (parent == 4 and right) else text
    if expr.op == "^":
        text = _fmt(expr.left, 5) + "^" + _fmt(expr.right, 4, right=True)
        return f"({text})" if parent > 4 or (parent == 4 and not right) else text
    prec = _PREC[expr.op]
    text = _fmt(expr.left, prec) + f" {expr.op} " + _fmt(expr.right, prec + 1, right=True)
    return f"({text})" if parent > prec else text


def format_expression(expr) -> str:
    return _fmt(expr)


def serialize_model(model: Model) -> str:
    """Canonical text: stocks, flows, auxiliaries, constants, tables; each sorted."""
    lines = [f"MODEL {model.name}"]
    for name in model.stocks:
        lines.append(f"STOCK {name} INIT {_fmt(model.variables[name].initial)}")
    for name in model.flows:
        var = model.variables[name]
        ends = ""
        if var.into is not None:
            ends += f" INTO {var.into}"
        if var.outof is not None:
            ends += f" OUTOF {var.outof}"
        lines.append(f"FLOW {name}{ends} = {_fmt(var.equation)}")
    for name in model.auxiliaries:
        lines.append(f"AUX {name} = {_fmt(model.variables[name].equation)}")
    for name, value in model.constants.items():
        lines.append(f"CONST {name} = {format_number(value)}")
    for name in sorted(model.tables):
        pts = " ".join(f"({format_number(x)}, {format_number(y)})" for x, y in model.tables[name])
        lines.append(f"TABLE {name} = {pts}")
    return "\n".join(lines) + "\n"


def parse_override_set(text: str) -> OverrideSet:
    entries = {}
    for lineno, tokens in _logical_lines(text):
        cur = _Cursor(tokens)
        name_tok = cur.tok
        name = cur.ident()
        op = cur.tok
        if op.kind != "op" or op.text not in ("=", "*="):
            raise cur.error("expected '=' or '*='")
        cur.advance()
        value = cur.number()
        cur.end()
        if name in entries:
            raise ParseError(name_tok.line, name_tok.column, f"duplicate override for {name}", name)
        entries[name] = Set(value) if op.text == "=" else Scale(value)
    return OverrideSet(entries)


def serialize_override_set(overrides: OverrideSet, header: str = "") -> str:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    for name in sorted(overrides.entries):
        entry = overrides.entries[name]
        if isinstance(entry, Set):
            lines.append(f"{name} = {format_number(entry.value)}")
        else:
            lines.append(f"{name} *= {format_number(entry.factor)}")
    return "\n".join(lines) + "\n"


def is_identifier(text: str) -> bool:
    return bool(IDENT_RE.match(text)) and text not in KEYWORDS and text not in BUILTINS


__all__ = [
    "ParseError", "parse_model", "serialize_model", "parse_override_set",
    "serialize_override_set", "parse_expression", "format_expression", "format_number",
    "is_identifier", "AUX", "CONST",
]
