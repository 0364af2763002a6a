"""Feedback-loop extraction and structural polarity classification.

Link signs are read off the target variable's equation without evaluating
anything: an occurrence is positive inside addends, multiplicands whose
cofactor is structurally non-negative, and MIN/MAX/CLAMP/SMOOTH/DELAY
arguments; it is negative as a subtrahend, under negation, or as a
divisor. Occurrences under LOOKUP, STEP, RAMP, an IF_POSITIVE condition,
an exponent, or a cofactor of unknown sign make the link undetermined.
"""
from __future__ import annotations

from dataclasses import dataclass

import networkx as nx

from .expr import BinOp, Call, Lookup, Neg, Num, Ref, children
from .model import AUX, CONST, FLOW, STOCK, Model, check_model

REINFORCING = "Reinforcing"
BALANCING = "Balancing"
UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class FeedbackLoop:
    cycle: tuple
    polarity: str
    signs: tuple = ()

    def describe(self) -> str:
        mark = {REINFORCING: "R", BALANCING: "B", UNDETERMINED: "?"}[self.polarity]
        path = " -> ".join(self.cycle + (self.cycle[0],))
        return f"{mark} {self.polarity}: {path}"


def _nonneg(expr, model: Model, seen=frozenset()) -> bool:
    """True when ``expr`` can be shown >= 0 from its structure alone.

    References to auxiliaries and flows are followed into their equations.
    """
    if isinstance(expr, Num):
        return expr.value >= 0
    if isinstance(expr, Ref):
        var = model.variables.get(expr.name)
        if var is None:
            return False
        if var.kind == CONST:
            return var.value is not None and var.value >= 0
        if var.kind in (AUX, FLOW) and var.equation is not None and expr.name not in seen:
            return _nonneg(var.equation, model, seen | {expr.name})
        return False
    if isinstance(expr, BinOp):
        if expr.op in ("+", "*", "/"):
            return _nonneg(expr.left, model, seen) and _nonneg(expr.right, model, seen)
        return False
    if isinstance(expr, Call):
        if expr.name == "MAX":
            return any(_nonneg(a, model, seen) for a in expr.args)
        if expr.name == "MIN":
            return all(_nonneg(a, model, seen) for a in expr.args)
        if expr.name in ("SMOOTH", "DELAY_FIXED"):
            return _nonneg(expr.args[0], model, seen)
        if expr.name == "CLAMP":
            return _nonneg(expr.args[1], model, seen) or (
                _nonneg(expr.args[0], model, seen) and _nonneg(expr.args[2], model, seen))
        if expr.name == "IF_POSITIVE":
            return _nonneg(expr.args[1], model, seen) and _nonneg(expr.args[2], model, seen)
    return False


def _occurrence_signs(expr, name, model, sign, out):
    """Append +1/-1/0 for every occurrence of ``name`` in ``expr``."""
    if isinstance(expr, Ref):
        if expr.name == name:
            out.append(sign)
        return
    if isinstance(expr, Neg):
        _occurrence_signs(expr.operand, name, model, -sign, out)
        return
    if isinstance(expr, BinOp):
        if expr.op == "+":
            _occurrence_signs(expr.left, name, model, sign, out)
            _occurrence_signs(expr.right, name, model, sign, out)
        elif expr.op == "-":
            _occurrence_signs(expr.left, name, model, sign, out)
            _occurrence_signs(expr.right, name, model, -sign, out)
        elif expr.op == "*":
            _occurrence_signs(expr.left, name, model, sign if _nonneg(expr.right, model) else 0, out)
            _occurrence_signs(expr.right, name, model, sign if _nonneg(expr.left, model) else 0, out)
        elif expr.op == "/":
            _occurrence_signs(expr.left, name, model, sign if _nonneg(expr.right, model) else 0, out)
            _occurrence_signs(expr.right, name, model, -sign if _nonneg(expr.left, model) else 0, out)
        else:
            _occurrence_signs(expr.left, name, model, 0, out)
            _occurrence_signs(expr.right, name, model, 0, out)
        return
    if isinstance(expr, Call):
        if expr.name in ("MIN", "MAX", "CLAMP"):
            signs = [sign] * len(expr.args)
        elif expr.name in ("SMOOTH", "DELAY_FIXED"):
            signs = [sign, 0]
        elif expr.name == "IF_POSITIVE":
            signs = [0, sign, sign]
        else:
            signs = [0] * len(expr.args)
        for arg, s in zip(expr.args, signs):
            _occurrence_signs(arg, name, model, s, out)
        return
    for child in children(expr):
        _occurrence_signs(child, name, model, 0, out)


def link_sign(model: Model, source: str, target: str) -> int:
    """Sign of the causal link source -> target: +1, -1, or 0 (undetermined)."""
    var = model.variables[target]
    if var.kind == STOCK:
        flow = model.variables[source]
        if flow.into == target and flow.outof == target:
            return 0
        return 1 if flow.into == target else -1
    signs = []
    _occurrence_signs(var.equation, source, model, 1, signs)
    if not signs:
        raise KeyError(f"{source} does not appear in the equation of {target}")
    if all(s == 1 for s in signs):
        return 1
    if all(s == -1 for s in signs):
        return -1
    return 0


def causal_graph(model: Model) -> nx.DiGraph:
    """Full dependency graph, including flow -> stock accumulation edges."""
    graph = nx.DiGraph()
    graph.add_nodes_from(model.variables)
    for name, var in model.variables.items():
        if var.kind == FLOW:
            for stock in (var.into, var.outof):
                if stock is not None:
                    graph.add_edge(name, stock)
        if var.kind in (FLOW, "aux"):
            for node in _refs(var.equation):
                graph.add_edge(node, name)
    for u, v in graph.edges:
        graph.edges[u, v]["sign"] = link_sign(model, u, v)
    return graph


def _refs(expr):
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Ref):
            yield node.name
        elif isinstance(node, Lookup):
            stack.append(node.arg)
        else:
            stack.extend(children(node))


def find_feedback_loops(model: Model) -> list:
    """All elementary cycles through at least one stock, sorted, each with a polarity."""
    check_model(model)
    graph = causal_graph(model)
    loops = []
    for cycle in nx.simple_cycles(graph):
        if not any(model.variables[n].kind == STOCK for n in cycle):
            continue
        i = cycle.index(min(cycle))
        cycle = tuple(cycle[i:] + cycle[:i])
        signs = tuple(graph.edges[a, b]["sign"] for a, b in zip(cycle, cycle[1:] + cycle[:1]))
        if 0 in signs:
            polarity = UNDETERMINED
        else:
            product = 1
            for s in signs:
                product *= s
            polarity = REINFORCING if product > 0 else BALANCING
        loops.append(FeedbackLoop(cycle, polarity, signs))
    loops.sort(key=lambda lp: lp.cycle)
    return loops
