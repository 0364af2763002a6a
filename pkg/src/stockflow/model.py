"""Stock-flow model types, structural validation and evaluation ordering."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import networkx as nx

from .expr import BUILTINS, Call, Expr, Lookup, Num, fold_constant, references, walk

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

STOCK = "stock"
FLOW = "flow"
AUX = "aux"
CONST = "const"
KINDS = (STOCK, FLOW, AUX, CONST)


class ModelError(ValueError):
    """A model (or an override set applied to it) is unusable."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class Variable:
    id: str
    kind: str
    equation: Expr | None = None
    value: float | None = None
    initial: Expr | None = None
    into: str | None = None
    outof: str | None = None

    @classmethod
    def stock(cls, id, initial):
        if isinstance(initial, (int, float)):
            initial = Num(float(initial))
        return cls(id, STOCK, initial=initial)

    @classmethod
    def flow(cls, id, equation, into=None, outof=None):
        return cls(id, FLOW, equation=equation, into=into, outof=outof)

    @classmethod
    def aux(cls, id, equation):
        return cls(id, AUX, equation=equation)

    @classmethod
    def const(cls, id, value):
        return cls(id, CONST, value=float(value))


@dataclass(frozen=True)
class Model:
    name: str
    variables: Mapping[str, Variable] = field(default_factory=dict)
    tables: Mapping[str, tuple] = field(default_factory=dict)

    @classmethod
    def build(cls, name, variables: Iterable[Variable], tables=None):
        """Convenience constructor from a list; duplicate ids raise ModelError."""
        out = {}
        for var in variables:
            if var.id in out:
                raise ModelError(f"duplicate identifier: {var.id}")
            out[var.id] = var
        tabs = {k: tuple((float(x), float(y)) for x, y in v) for k, v in (tables or {}).items()}
        return cls(name, out, tabs)

    def of_kind(self, kind) -> list:
        return sorted(k for k, v in self.variables.items() if v.kind == kind)

    @property
    def stocks(self):
        return self.of_kind(STOCK)

    @property
    def flows(self):
        return self.of_kind(FLOW)

    @property
    def auxiliaries(self):
        return self.of_kind(AUX)

    @property
    def constants(self) -> dict:
        return {k: v.value for k, v in sorted(self.variables.items()) if v.kind == CONST}

    def inflows(self, stock):
        return [f for f in self.flows if self.variables[f].into == stock]

    def outflows(self, stock):
        return [f for f in self.flows if self.variables[f].outof == stock]

    def counts(self) -> dict:
        return {kind: len(self.of_kind(kind)) for kind in KINDS}


@dataclass(frozen=True)
class Diagnostic:
    code: str
    subject: str
    message: str

    def __str__(self):
        return self.message


# ---------------------------------------------------------------------------
# validation


def _instantaneous_graph(model: Model) -> nx.DiGraph:
    graph = nx.DiGraph()
    computed = {k for k, v in model.variables.items() if v.kind in (AUX, FLOW)}
    graph.add_nodes_from(computed)
    for name in computed:
        for dep in references(model.variables[name].equation):
            if dep in computed:
                graph.add_edge(dep, name)
    return graph


def _rotate(cycle):
    i = cycle.index(min(cycle))
    return cycle[i:] + cycle[:i]


def _call_defects(name, expr, model, constants):
    out = []
    for node in walk(expr):
        if isinstance(node, Call):
            if node.name not in BUILTINS:
                out.append(Diagnostic("unknown-builtin", name, f"{name}: unknown builtin {node.name}"))
            elif len(node.args) != BUILTINS[node.name]:
                out.append(Diagnostic(
                    "arity", name,
                    f"{name}: {node.name} expects {BUILTINS[node.name]} arguments, got {len(node.args)}",
                ))
            elif node.name in ("SMOOTH", "DELAY_FIXED"):
                tau = fold_constant(node.args[1], constants)
                if tau is None or tau <= 0:
                    out.append(Diagnostic(
                        "delay-time", name,
                        f"{name}: {node.name} delay time must be a positive constant expression",
                    ))
        elif isinstance(node, Lookup) and node.table not in model.tables:
            out.append(Diagnostic("unresolved", name, f"{name}: unknown lookup table {node.table}"))
    return out


def validate_model(model: Model) -> list:
    """Return one Diagnostic per structural defect; an empty list means valid."""
    diags = []
    names = set(model.variables)
    constants = {k: v for k, v in model.constants.items() if v is not None and math.isfinite(v)}

    if not IDENT_RE.match(model.name or ""):
        diags.append(Diagnostic("identifier", model.name, f"invalid model name: {model.name!r}"))

    for key in sorted(model.variables):
        var = model.variables[key]
        if key != var.id:
            diags.append(Diagnostic("identifier", key, f"variable keyed {key!r} has id {var.id!r}"))
        if not IDENT_RE.match(var.id or "") or var.id in BUILTINS:
            diags.append(Diagnostic("identifier", key, f"invalid identifier: {var.id!r}"))
        if var.kind not in KINDS:
            diags.append(Diagnostic("kind", key, f"{key}: unknown variable kind {var.kind!r}"))
            continue

        if var.kind == CONST:
            if var.value is None or not math.isfinite(var.value):
                diags.append(Diagnostic("constant", key, f"{key}: constant value must be finite"))
            continue

        expr = var.initial if var.kind == STOCK else var.equation
        if expr is None:
            what = "initial expression" if var.kind == STOCK else "equation"
            diags.append(Diagnostic("missing", key, f"{key}: missing {what}"))
            continue
        for ref in sorted(references(expr) - names):
            diags.append(Diagnostic("unresolved", key, f"{key}: unresolved reference {ref}"))
        diags.extend(_call_defects(key, expr, model, constants))

        if var.kind == STOCK:
            if not references(expr) - names and fold_constant(expr, constants) is None:
                diags.append(Diagnostic(
                    "stock-initial", key, f"{key}: initial value is not constant-foldable"
                ))
        elif var.kind == FLOW:
            if var.into is None and var.outof is None:
                diags.append(Diagnostic("detached-flow", key, f"{key}: flow is not attached to any stock"))
            for end in (var.into, var.outof):
                if end is None:
                    continue
                if end not in names:
                    diags.append(Diagnostic("unresolved", key, f"{key}: unresolved stock {end}"))
                elif model.variables[end].kind != STOCK:
                    diags.append(Diagnostic("detached-flow", key, f"{key}: {end} is not a stock"))

    for tname in sorted(model.tables):
        points = model.tables[tname]
        if tname in names:
            diags.append(Diagnostic("duplicate", tname, f"duplicate identifier: {tname}"))
        if not IDENT_RE.match(tname):
            diags.append(Diagnostic("identifier", tname, f"invalid identifier: {tname!r}"))
        xs = [p[0] for p in points]
        bad = len(points) < 2 or any(b <= a for a, b in zip(xs, xs[1:]))
        bad = bad or not all(math.isfinite(c) for p in points for c in p)
        if bad:
            diags.append(Diagnostic(
                "lookup-table", tname,
                f"{tname}: lookup table needs >= 2 finite breakpoints with strictly increasing x",
            ))

    graph = _instantaneous_graph(model)
    cycles = sorted(_rotate(c) for c in nx.simple_cycles(graph))
    for cycle in cycles:
        path = " → ".join(cycle + [cycle[0]])
        diags.append(Diagnostic("instantaneous-cycle", cycle[0], f"instantaneous cycle: {path}"))
    return diags


def check_model(model: Model) -> None:
    diags = validate_model(model)
    if diags:
        raise ModelError(f"invalid model {model.name}: " + "; ".join(map(str, diags)), diags)


def evaluation_order(model: Model) -> list:
    """Auxiliaries and flows in dependency order, ties broken lexicographically."""
    check_model(model)
    return list(nx.lexicographical_topological_sort(_instantaneous_graph(model)))


def initial_values(model: Model) -> dict:
    """Constant-folded initial value of every stock."""
    constants = model.constants
    return {s: fold_constant(model.variables[s].initial, constants) for s in model.stocks}


# ---------------------------------------------------------------------------
# overrides


@dataclass(frozen=True)
class Set:
    value: float


@dataclass(frozen=True)
class Scale:
    factor: float

    def __post_init__(self):
        if not math.isfinite(self.factor):
            raise ValueError(f"scale factor must be finite, got {self.factor}")


@dataclass(frozen=True)
class OverrideSet:
    """Named constant replacements (Set) or multipliers (Scale)."""

    entries: Mapping[str, Set | Scale] = field(default_factory=dict)

    @classmethod
    def of(cls, **values):
        return cls({k: v if isinstance(v, (Set, Scale)) else Set(float(v)) for k, v in values.items()})

    def __len__(self):
        return len(self.entries)

    def __bool__(self):
        return bool(self.entries)

    def key(self) -> tuple:
        return tuple(sorted((k, type(v).__name__, v.value if isinstance(v, Set) else v.factor)
                            for k, v in self.entries.items()))

    def then(self, later: "OverrideSet") -> "OverrideSet":
        """Compose two sets so that applying the result equals applying self, then later."""
        out = dict(self.entries)
        for name, entry in later.entries.items():
            prev = out.get(name)
            if isinstance(entry, Scale) and isinstance(prev, Set):
                out[name] = Set(prev.value * entry.factor)
            elif isinstance(entry, Scale) and isinstance(prev, Scale):
                out[name] = Scale(prev.factor * entry.factor)
            else:
                out[name] = entry
        return OverrideSet(out)


def compose(*sets: OverrideSet) -> OverrideSet:
    out = OverrideSet()
    for s in sets:
        out = out.then(s)
    return out


def apply_overrides(model: Model, overrides: OverrideSet | None) -> Model:
    if not overrides:
        return model
    variables = dict(model.variables)
    for name in sorted(overrides.entries):
        entry = overrides.entries[name]
        var = variables.get(name)
        if var is None:
            raise ModelError(f"override target {name} does not exist in model {model.name}")
        if var.kind != CONST:
            raise ModelError(f"override target {name} is a {var.kind}, not a constant")
        if isinstance(entry, Set):
            value = entry.value
        else:
            value = var.value * entry.factor
        variables[name] = replace(var, value=float(value))
    return replace(model, variables=variables)
