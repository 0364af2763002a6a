"""Seeded random models for round-trip and fuzz testing."""
from __future__ import annotations

import random

from .expr import BUILTINS, STATEFUL, BinOp, Call, Lookup, Neg, Num, Ref
from .model import AUX, CONST, FLOW, STOCK, Model, Variable

_OPS = ("+", "-", "*", "/", "^")
_CALLS = tuple(sorted(n for n in BUILTINS if n != "LOOKUP"))


def random_number(rng: random.Random) -> float:
    kind = rng.random()
    if kind < 0.3:
        return float(rng.randint(0, 20))
    if kind < 0.6:
        return round(rng.uniform(0, 10), rng.randint(1, 6))
    return rng.uniform(0, 1) * 10 ** rng.randint(-6, 6)


def random_expression(rng: random.Random, names, tables=(), depth=3):
    if depth <= 0 or rng.random() < 0.25:
        if names and rng.random() < 0.6:
            return Ref(rng.choice(names))
        return Num(random_number(rng))
    roll = rng.random()
    if roll < 0.1:
        return Neg(random_expression(rng, names, tables, depth - 1))
    if roll < 0.65:
        return BinOp(
            rng.choice(_OPS),
            random_expression(rng, names, tables, depth - 1),
            random_expression(rng, names, tables, depth - 1),
        )
    if roll < 0.75 and tables:
        return Lookup(rng.choice(tables), random_expression(rng, names, tables, depth - 1))
    name = rng.choice(_CALLS)
    if name in STATEFUL:
        # delay and smoothing times must be positive constants
        return Call(name, (random_expression(rng, names, tables, depth - 1), Num(float(rng.randint(1, 6)))))
    return Call(name, tuple(random_expression(rng, names, tables, depth - 1) for _ in range(BUILTINS[name])))


def _initial(rng, consts):
    """Constant-foldable initial value."""
    leaf = lambda: Ref(rng.choice(consts)) if consts and rng.random() < 0.5 else Num(random_number(rng))
    if rng.random() < 0.5:
        return leaf()
    return BinOp(rng.choice(("+", "-", "*")), leaf(), leaf())


def random_model(rng: random.Random, max_per_kind=4) -> Model:
    """A structurally valid model: acyclic auxiliaries, every flow attached."""
    n_stock = rng.randint(1, max_per_kind)
    stocks = [f"s{i}" for i in range(n_stock)]
    consts = [f"k{i}" for i in range(rng.randint(0, max_per_kind))]
    tables = tuple(f"tab{i}" for i in range(rng.randint(0, 2)))
    variables = [Variable(s, STOCK, initial=_initial(rng, consts)) for s in stocks]
    variables += [Variable(c, CONST, value=rng.choice((-1, 1)) * random_number(rng)) for c in consts]
    visible = stocks + consts
    for i in range(rng.randint(0, max_per_kind)):
        name = f"x{i}"
        variables.append(Variable(name, AUX, equation=random_expression(rng, visible, tables)))
        visible = visible + [name]
    for i in range(rng.randint(1, max_per_kind)):
        into = rng.choice(stocks + [None])
        outof = rng.choice(stocks) if into is None or rng.random() < 0.3 else None
        variables.append(Variable(f"f{i}", FLOW, equation=random_expression(rng, visible, tables), into=into, outof=outof))
    table_data = {}
    for t in tables:
        xs = sorted({round(rng.uniform(-5, 5), 3) for _ in range(rng.randint(2, 5))})
        if len(xs) < 2:
            xs = [0.0, 1.0]
        table_data[t] = tuple((float(x), float(round(rng.uniform(-2, 2), 4))) for x in xs)
    return Model.build(f"m{rng.randint(0, 10**6)}", variables, table_data)
