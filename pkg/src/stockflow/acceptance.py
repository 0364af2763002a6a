"""Reproduction gate: the twelve acceptance checks and the CSV artifacts they produce.

Shared by ``stockflow verify`` and tests/test_acceptance.py.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .analysis import DECREASING, compare_runs, compare_series, improvement_pct, sensitivity_sweep
from .calibration import SYNTHETIC_SUITE, calibrate, grid_search_oracle, growth_recurrence, synthetic_problem
from .engine import EULER, REFERENCE_SPEC, RK4, SimSpec, simulate
from .generate import random_model
from .loops import BALANCING, REINFORCING, find_feedback_loops
from .model import OverrideSet, Set
from .parser import parse_model, serialize_model, serialize_override_set
from .reference import FEAR, SCENARIOS, STOCK, STRATEGIES, load_reference, reference_problem
from .report import to_csv

# tolerances
EXACT_RTOL = 1e-12
EULER_RATIO = (1.8, 2.2)
RK4_RATIO = (12.0, 20.0)
CONSERVATION_TOL = 1e-12
ROUND_TRIP_MODELS = 200
ROUND_TRIP_SEED = 20240601
FIT_RTOL = 0.10
FIT_ATOL = 5e-4
GAP_RANGE = (0.29, 0.34)
DIVERGENCE_RANGE = (23, 28)
IMPROVEMENT_RANGE = {"scenario1": (0.09, 0.13), "scenario2": (0.17, 0.21), "scenario3": (0.15, 0.19)}
RESIDUAL_RANGE = {"scenario1": (0.17, 0.23), "scenario2": (0.08, 0.14), "scenario3": (0.10, 0.16)}
SWEEP_FACTORS = (1.0, 2.0, 4.0)
SWEEP_RATIO_MAX = 0.80
ORACLE_FACTOR = 1.05
ORACLE_RESOLUTION = 50
PARAM_RTOL = 0.01

LINEAR_GROWTH = """\
MODEL linear_growth
STOCK A INIT 0
FLOW f INTO A = d * (a0 + A)
CONST d = 0.1664
CONST a0 = 0.0002795
"""

DECAY = """\
MODEL decay
STOCK S INIT 1
FLOW out OUTOF S = k * S
CONST k = 0.5
"""

TRANSFER = """\
MODEL transfer
STOCK A INIT 0.7
STOCK B INIT 0.3
FLOW move INTO B OUTOF A = 0.03 * A - 0.011 * B + STEP(0.002, 40) + 0.004 * IF_POSITIVE(A - B, 1, -1)
"""

POSITIVE_LOOP = "MODEL positive\nSTOCK A INIT 1\nFLOW f INTO A = 0.1*A\n"
NEGATIVE_LOOP = "MODEL negative\nSTOCK A INIT 1\nFLOW g OUTOF A = 0.1*A\n"


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.number:2d} {self.title}: {self.detail}"


def _within(value, bounds):
    return value is not None and bounds[0] <= value <= bounds[1]


def check_engine_exactness():
    model = parse_model(LINEAR_GROWTH)
    run = simulate(model, REFERENCE_SPEC)
    oracle = growth_recurrence(0.1664, 2.795e-4, 60)
    worst = 0.0
    for sim, ref in zip(run["A"], oracle):
        err = abs(sim - ref) / abs(ref) if ref else abs(sim)
        worst = max(worst, err)
    ok = run.completed and len(run["A"]) == len(oracle) and worst <= EXACT_RTOL
    return CriterionResult(1, "engine exactness", ok, f"max relative error {worst:.3g} over 60 steps")


def _decay_error(method, dt):
    run = simulate(parse_model(DECAY), SimSpec(0.0, 2.0, dt, method))
    return abs(run.final("S") - math.exp(-1.0))


def check_integrator_order():
    euler = _decay_error(EULER, 0.1) / _decay_error(EULER, 0.05)
    rk4 = _decay_error(RK4, 0.1) / _decay_error(RK4, 0.05)
    ok = _within(euler, EULER_RATIO) and _within(rk4, RK4_RATIO)
    return CriterionResult(2, "integrator order", ok, f"error ratio on halving dt: euler {euler:.3f}, rk4 {rk4:.3f}")


def check_conservation():
    run = simulate(parse_model(TRANSFER), SimSpec(0.0, 100.0, 0.1))
    total0 = run["A"][0] + run["B"][0]
    drift = max(abs(a + b - total0) for a, b in zip(run["A"], run["B"]))
    ok = run.completed and len(run.times) == 1001 and drift <= CONSERVATION_TOL
    return CriterionResult(3, "conservation", ok, f"max drift of A+B {drift:.3g} over 1000 steps")


def check_loop_polarity():
    pos = find_feedback_loops(parse_model(POSITIVE_LOOP))
    neg = find_feedback_loops(parse_model(NEGATIVE_LOOP))
    ok = (
        [(l.cycle, l.polarity) for l in pos] == [(("A", "f"), REINFORCING)]
        and [(l.cycle, l.polarity) for l in neg] == [(("A", "g"), BALANCING)]
    )
    detail = "; ".join(l.describe() for l in pos + neg)
    return CriterionResult(4, "loop polarity", ok, detail)


def check_round_trip(bundle):
    rng = random.Random(ROUND_TRIP_SEED)
    failures = 0
    for _ in range(ROUND_TRIP_MODELS):
        model = random_model(rng)
        if parse_model(serialize_model(model)) != model:
            failures += 1
    text = (bundle.directory / "bi_acceptance.sdm").read_text()
    canonical = serialize_model(parse_model(text))
    stable = serialize_model(parse_model(canonical)) == canonical
    ok = failures == 0 and stable
    return CriterionResult(
        5, "parser round-trip", ok,
        f"{ROUND_TRIP_MODELS - failures}/{ROUND_TRIP_MODELS} generated models; shipped model stable: {stable}",
    )


@dataclass
class ReferenceRuns:
    """Everything criteria 6-10 need, computed once from a fresh calibration."""

    bundle: object
    fit: object
    calibrated: OverrideSet
    baseline: dict = field(default_factory=dict)  # strategy -> RunResult
    scenarios: dict = field(default_factory=dict)  # scenario -> RunResult
    sweep: object = None


def reference_runs(bundle=None) -> ReferenceRuns:
    bundle = bundle or load_reference()
    fit = calibrate(reference_problem(bundle))
    calibrated = fit.as_overrides()
    runs = ReferenceRuns(bundle, fit, calibrated)
    for s in STRATEGIES:
        runs.baseline[s] = simulate(bundle.model, REFERENCE_SPEC, bundle.strategies[s].then(calibrated))
    traditional = bundle.strategies["traditional"].then(calibrated)
    for sc in SCENARIOS:
        runs.scenarios[sc] = simulate(bundle.model, REFERENCE_SPEC, traditional.then(bundle.scenarios[sc]))
    runs.sweep = sensitivity_sweep(bundle.model, REFERENCE_SPEC, traditional, FEAR, SWEEP_FACTORS, [STOCK])
    return runs


def baseline_errors(runs: ReferenceRuns, strategy):
    """Worst relative error for months 12-60 and absolute error for months 1-11."""
    fixture = runs.bundle.fixture
    skip = (40, 41) if strategy == "selfservice" else ()
    sim = runs.baseline[strategy][STOCK]
    rel, absolute, worst_month = 0.0, 0.0, None
    for month, obs, value in zip(fixture["month"], fixture[strategy], sim):
        if month <= 11:
            absolute = max(absolute, abs(value - obs))
        elif month not in skip:
            err = abs(value - obs) / abs(obs)
            if err > rel:
                rel, worst_month = err, month
    return rel, absolute, worst_month


def check_baseline(runs: ReferenceRuns):
    parts, ok = [], True
    for s in STRATEGIES:
        rel, absolute, month = baseline_errors(runs, s)
        ok = ok and rel <= FIT_RTOL and absolute <= FIT_ATOL
        parts.append(f"{s} rel {rel:.4f} (worst month {month}) abs {absolute:.2e}")
    return CriterionResult(6, "baseline reproduction", ok, "; ".join(parts))


def month60_gap(runs: ReferenceRuns):
    return compare_runs(runs.baseline["selfservice"], runs.baseline["traditional"], STOCK).gap_pct_final


def check_gap(runs: ReferenceRuns):
    gap = month60_gap(runs)
    return CriterionResult(7, "month-60 gap", _within(gap, GAP_RANGE), f"gap {gap:.4f}")


def divergence_months(runs: ReferenceRuns):
    f = runs.bundle.fixture
    fixture = compare_series(STOCK, [float(m) for m in f["month"]], f["selfservice"], f["traditional"])
    calibrated = compare_runs(runs.baseline["selfservice"], runs.baseline["traditional"], STOCK)
    return fixture.divergence_month, calibrated.divergence_month


def check_divergence(runs: ReferenceRuns):
    fixture, calibrated = divergence_months(runs)
    ok = _within(fixture, DIVERGENCE_RANGE) and _within(calibrated, DIVERGENCE_RANGE)
    return CriterionResult(8, "divergence month", ok, f"fixture {fixture}, calibrated {calibrated}")


def scenario_figures(runs: ReferenceRuns):
    base = runs.baseline["traditional"]
    self_end = runs.baseline["selfservice"].final(STOCK)
    out = {}
    for sc in SCENARIOS:
        run = runs.scenarios[sc]
        out[sc] = (improvement_pct(base, run, STOCK), (self_end - run.final(STOCK)) / run.final(STOCK))
    return out


def check_scenarios(runs: ReferenceRuns):
    figures = scenario_figures(runs)
    ok = all(
        _within(imp, IMPROVEMENT_RANGE[sc]) and _within(res, RESIDUAL_RANGE[sc])
        for sc, (imp, res) in figures.items()
    )
    detail = "; ".join(f"{sc} improvement {imp:.4f} residual {res:.4f}" for sc, (imp, res) in figures.items())
    return CriterionResult(9, "scenario deltas", ok, detail)


def check_sensitivity(runs: ReferenceRuns):
    sweep = runs.sweep
    terminal = sweep.terminal(STOCK)
    ratio = terminal[-1] / terminal[0]
    ok = sweep.verdicts[STOCK] == DECREASING and ratio <= SWEEP_RATIO_MAX
    return CriterionResult(
        10, "fear sensitivity", ok,
        f"terminal {', '.join(f'{v:.4f}' for v in terminal)} ({sweep.verdicts[STOCK]}); x4/x1 {ratio:.3f}",
    )


def check_calibration_oracle():
    parts, ok = [], True
    for drive, a0, scale in SYNTHETIC_SUITE:
        problem = synthetic_problem(drive, a0, scale)
        fit = calibrate(problem)
        grid = grid_search_oracle(problem, ORACLE_RESOLUTION)
        truth = {"drive": drive, "a0": a0}
        err = max(abs(fit.values[k] - v) / v for k, v in truth.items())
        case_ok = fit.loss <= ORACLE_FACTOR * grid.loss and err <= PARAM_RTOL
        ok = ok and case_ok
        parts.append(f"({drive}, {a0}, {scale}) loss {fit.loss:.2e} vs grid {grid.loss:.2e}, param err {err:.1e}")
    return CriterionResult(11, "calibration oracle", ok, "; ".join(parts))


def artifacts(runs: ReferenceRuns) -> dict:
    """CSV (and override) texts written by ``verify``; deterministic by construction."""
    f = runs.bundle.fixture
    months = [float(m) for m in f["month"]]
    base = runs.baseline
    out = {
        "baseline.csv": to_csv(months, [
            ("selfservice", base["selfservice"][STOCK]),
            ("traditional", base["traditional"][STOCK]),
            ("fixture_selfservice", f["selfservice"]),
            ("fixture_traditional", f["traditional"]),
        ]),
        "scenarios.csv": to_csv(months, [("traditional", base["traditional"][STOCK])] + [
            (sc, runs.scenarios[sc][STOCK]) for sc in SCENARIOS
        ]),
        "sweep_fear.csv": to_csv(months, [
            (f"{STOCK}@x{factor:g}", run[STOCK]) for factor, run in zip(runs.sweep.factors, runs.sweep.runs)
        ]),
        "calibrated.ovr": calibrated_text(runs.fit),
    }
    return out


def calibrated_text(fit, model_name="bi_acceptance") -> str:
    header = (
        f"fitted free parameters of model {model_name}\n"
        f"loss {fit.loss!r}, evaluations {fit.evaluations}, converged {fit.converged}"
    )
    return serialize_override_set(OverrideSet({k: Set(v) for k, v in sorted(fit.values.items())}), header)


def check_determinism(first: dict, bundle):
    second = artifacts(reference_runs(bundle))
    same = first == second
    return CriterionResult(12, "determinism", same, f"{len(first)} artifacts byte-identical across two runs: {same}")


def run_all(bundle=None, with_determinism=True):
    """Returns (results, artifacts)."""
    bundle = bundle or load_reference()
    results = [
        check_engine_exactness(),
        check_integrator_order(),
        check_conservation(),
        check_loop_polarity(),
        check_round_trip(bundle),
    ]
    runs = reference_runs(bundle)
    results += [
        check_baseline(runs),
        check_gap(runs),
        check_divergence(runs),
        check_scenarios(runs),
        check_sensitivity(runs),
        check_calibration_oracle(),
    ]
    files = artifacts(runs)
    if with_determinism:
        results.append(check_determinism(files, bundle))
    return results, files
