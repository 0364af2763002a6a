"""Expression trees for model equations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

# builtin name -> accepted argument count
BUILTINS = {
    "MIN": 2,
    "MAX": 2,
    "CLAMP": 3,
    "IF_POSITIVE": 3,
    "STEP": 2,
    "RAMP": 2,
    "SMOOTH": 2,
    "DELAY_FIXED": 2,
    "LOOKUP": 2,
}

STATEFUL = ("SMOOTH", "DELAY_FIXED")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


@dataclass(frozen=True)
class Lookup:
    table: str
    arg: "Expr"


Expr = Union[Num, Ref, Neg, BinOp, Call, Lookup]


def children(expr: Expr) -> tuple:
    if isinstance(expr, Neg):
        return (expr.operand,)
    if isinstance(expr, BinOp):
        return (expr.left, expr.right)
    if isinstance(expr, Call):
        return expr.args
    if isinstance(expr, Lookup):
        return (expr.arg,)
    return ()


def walk(expr: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def references(expr: Expr) -> set:
    """Variable names referenced anywhere in ``expr``."""
    return {node.name for node in walk(expr) if isinstance(node, Ref)}


def tables(expr: Expr) -> set:
    return {node.table for node in walk(expr) if isinstance(node, Lookup)}


def fold_constant(expr: Expr, constants: dict) -> float | None:
    """Evaluate ``expr`` using only literals and ``constants``.

    Returns None when the expression depends on anything else (stocks,
    auxiliaries, time-dependent builtins) or cannot be evaluated.
    """
    try:
        value = _fold(expr, constants)
    except (ZeroDivisionError, OverflowError, ValueError, TypeError, _NotFoldable):
        return None
    if isinstance(value, complex) or value != value or value in (float("inf"), float("-inf")):
        return None
    return float(value)


class _NotFoldable(Exception):
    pass


def _fold(expr, constants):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Ref):
        if expr.name in constants:
            return constants[expr.name]
        raise _NotFoldable(expr.name)
    if isinstance(expr, Neg):
        return -_fold(expr.operand, constants)
    if isinstance(expr, BinOp):
        a = _fold(expr.left, constants)
        b = _fold(expr.right, constants)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if expr.op == "/":
            return a / b
        return a ** b
    if isinstance(expr, Call):
        args = [_fold(a, constants) for a in expr.args]
        if expr.name == "MIN":
            return min(args)
        if expr.name == "MAX":
            return max(args)
        if expr.name == "CLAMP":
            return min(max(args[0], args[1]), args[2])
        if expr.name == "IF_POSITIVE":
            return args[1] if args[0] > 0 else args[2]
    raise _NotFoldable(type(expr).__name__)
