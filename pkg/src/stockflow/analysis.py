"""Strategy comparison, scenario improvement and one-parameter sensitivity sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import RunResult, SimSpec, simulate
from .model import CONST, Model, ModelError, OverrideSet, Scale, compose

INCREASING = "Increasing"
DECREASING = "Decreasing"
NON_MONOTONE = "NonMonotone"

DEFAULT_THETA = 0.10
DEFAULT_EPS = 0.01
# (a-b)/b for month 26 of the reference table is 0.0999...98 in binary floating point
THRESHOLD_TOL = 1e-9


class AnalysisError(ValueError):
    pass


class SweepAbort(RuntimeError):
    def __init__(self, factor, run):
        self.factor = factor
        self.run = run
        status = run.status
        super().__init__(
            f"run aborted for factor {factor}: {status.reason} at t={status.time:g}"
            + (f" in {status.variable}" if status.variable else "")
        )


@dataclass
class ComparisonReport:
    variable: str
    times: list
    values_a: list
    values_b: list
    gap_pct: list  # (a-b)/b per recorded time; None where b == 0
    gap_pct_final: float | None
    divergence_month: float | None
    theta_rel: float = DEFAULT_THETA
    eps_abs: float = DEFAULT_EPS

    def gap_pct_at(self, t):
        for ti, g in zip(self.times, self.gap_pct):
            if abs(ti - t) <= 1e-9:
                return g
        raise KeyError(f"time {t} is not on the output grid")


def _check_pair(a: RunResult, b: RunResult, variable):
    for run, label in ((a, "a"), (b, "b")):
        if not run.completed:
            raise AnalysisError(f"run {label} did not complete: {run.status}")
        if variable not in run.series:
            raise AnalysisError(f"variable {variable} missing from run {label}")
    if len(a.times) != len(b.times) or any(abs(x - y) > 1e-9 for x, y in zip(a.times, b.times)):
        raise AnalysisError("runs have different time grids")


def divergence_time(times, values_a, values_b, theta_rel=DEFAULT_THETA, eps_abs=DEFAULT_EPS):
    """First time where (a - b) / max(|b|, eps_abs) reaches theta_rel, else None."""
    for t, a, b in zip(times, values_a, values_b):
        if (a - b) / max(abs(b), eps_abs) >= theta_rel - THRESHOLD_TOL:
            return t
    return None


def compare_series(variable, times, values_a, values_b, theta_rel=DEFAULT_THETA, eps_abs=DEFAULT_EPS):
    if not (len(times) == len(values_a) == len(values_b)) or not times:
        raise AnalysisError("series lengths differ")
    gaps = [None if b == 0 else (a - b) / b for a, b in zip(values_a, values_b)]
    return ComparisonReport(
        variable, list(times), list(values_a), list(values_b), gaps, gaps[-1],
        divergence_time(times, values_a, values_b, theta_rel, eps_abs), theta_rel, eps_abs,
    )


def compare_runs(a: RunResult, b: RunResult, variable, theta_rel=DEFAULT_THETA, eps_abs=DEFAULT_EPS):
    _check_pair(a, b, variable)
    return compare_series(variable, a.times, a[variable], b[variable], theta_rel, eps_abs)


def improvement_pct(base: RunResult, scenario: RunResult, variable) -> float:
    """Relative change of ``variable`` at the final time, scenario versus base."""
    _check_pair(base, scenario, variable)
    base_end = base.final(variable)
    if base_end == 0:
        raise AnalysisError(f"improvement undefined: base {variable} is 0 at t={base.times[-1]:g}")
    return (scenario.final(variable) - base_end) / base_end


def monotonicity(values) -> str:
    """Verdict over values ordered by ascending factor; fewer than two points is NonMonotone."""
    if len(values) < 2:
        return NON_MONOTONE
    diffs = [b - a for a, b in zip(values, values[1:])]
    if all(d > 0 for d in diffs):
        return INCREASING
    if all(d < 0 for d in diffs):
        return DECREASING
    return NON_MONOTONE


@dataclass
class SweepReport:
    parameter: str
    factors: list
    runs: list
    tracked: list
    verdicts: dict = field(default_factory=dict)

    def terminal(self, variable) -> list:
        return [run.final(variable) for run in self.runs]


def sensitivity_sweep(
    model: Model,
    spec: SimSpec,
    base_overrides: OverrideSet | None,
    parameter: str,
    factors,
    tracked,
) -> SweepReport:
    """Scale one constant by each factor on top of ``base_overrides`` and rerun."""
    factors = [float(f) for f in factors]
    if not factors:
        raise AnalysisError("factors must be non-empty")
    if any(b <= a for a, b in zip(factors, factors[1:])):
        raise AnalysisError("factors must be distinct and sorted ascending")
    var = model.variables.get(parameter)
    if var is None or var.kind != CONST:
        raise ModelError(f"sweep parameter {parameter} is not a constant of {model.name}")
    tracked = [tracked] if isinstance(tracked, str) else list(tracked)
    base = base_overrides or OverrideSet()
    runs = []
    for factor in factors:
        run = simulate(model, spec, compose(base, OverrideSet({parameter: Scale(factor)})))
        if not run.completed:
            raise SweepAbort(factor, run)
        runs.append(run)
    verdicts = {v: monotonicity([r.final(v) for r in runs]) for v in tracked}
    return SweepReport(parameter, factors, runs, tracked, verdicts)


def relative_errors(simulated, observed):
    return [abs(s - o) / abs(o) if o else math.inf for s, o in zip(simulated, observed)]
