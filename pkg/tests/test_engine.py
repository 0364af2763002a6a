import math
import random

import pytest

from stockflow.calibration import growth_recurrence
from stockflow.engine import (
    REFERENCE_SPEC, RK4, CompiledModel, EvaluationError, SimSpec, eval_expression, lookup_interpolate, simulate,
)
from stockflow.generate import random_model
from stockflow.model import ModelError, OverrideSet, evaluation_order, initial_values
from stockflow.parser import parse_expression, parse_model


def test_arithmetic_and_builtins():
    assert eval_expression(parse_expression("2 + 3*4"), {}, 0) == 14
    step = parse_expression("STEP(1, 10)")
    assert eval_expression(step, {}, 5) == 0 and eval_expression(step, {}, 12) == 1
    assert eval_expression(parse_expression("RAMP(2, 3)"), {}, 5) == 4
    assert eval_expression(parse_expression("CLAMP(5, 0, 1)"), {}, 0) == 1
    assert eval_expression(parse_expression("IF_POSITIVE(-1, 1/0, 7)"), {}, 0) == 7


def test_traditional_drive_index_at_starting_point():
    expr = parse_expression("MAX(0, 0.1402 + 0.0137*1.0 + 0.0153*0.6 + 0.0039*0.4 - 0.0054*0.8)")
    oracle = max(0.0, 0.1402 + 0.0137 * 1.0 + 0.0153 * 0.6 + 0.0039 * 0.4 - 0.0054 * 0.8)
    assert eval_expression(expr, {}, 1) == oracle
    assert oracle == pytest.approx(0.16032, abs=1e-12)


def test_evaluation_errors_carry_time_and_variable():
    with pytest.raises(EvaluationError) as info:
        eval_expression(parse_expression("1 / x"), {"x": 0.0}, 3.0, variable="y")
    assert info.value.time == 3.0 and info.value.variable == "y"
    with pytest.raises(EvaluationError):
        eval_expression(parse_expression("x ^ 0.5"), {"x": -1.0}, 0)


@pytest.mark.parametrize("x, expected", [(0.5, 0.5), (2, 1), (-1, 0)])
def test_lookup_two_points(x, expected):
    assert lookup_interpolate([(0, 0), (1, 1)], x) == expected


def test_lookup_three_points():
    assert lookup_interpolate([(0, 0), (2, 1), (4, 0)], 3) == 0.5


def test_stock_without_flows_is_constant():
    run = simulate(parse_model("MODEL m\nSTOCK S INIT 10\n"), SimSpec(0, 5, 1))
    assert run.times == [0, 1, 2, 3, 4, 5] and run["S"] == [10.0] * 6


def test_linear_growth_matches_recurrence():
    model = parse_model("MODEL m\nSTOCK A INIT 0\nFLOW f INTO A = 0.1664*(2.795e-4 + A)\n")
    run = simulate(model, SimSpec(1, 4, 1))
    assert run["A"] == pytest.approx(growth_recurrence(0.1664, 2.795e-4, 4), rel=1e-12)
    # first step by hand: 0.1664 * 2.795e-4
    assert run["A"][1] == pytest.approx(4.651e-5, rel=1e-3)


def test_euler_decay_close_to_closed_form():
    model = parse_model("MODEL m\nSTOCK S INIT 1\nFLOW g OUTOF S = 0.5*S\n")
    run = simulate(model, SimSpec(0, 2, 0.01))
    assert abs(run.final("S") - math.exp(-1)) / math.exp(-1) < 0.005


def test_rk4_is_much_closer():
    model = parse_model("MODEL m\nSTOCK S INIT 1\nFLOW g OUTOF S = 0.5*S\n")
    run = simulate(model, SimSpec(0, 2, 0.1, RK4))
    assert run.final("S") == pytest.approx(math.exp(-1), abs=1e-7)


def test_flows_use_step_start_values():
    # two stocks feeding each other; both flows must see the same step-start state
    model = parse_model("MODEL m\nSTOCK A INIT 1\nSTOCK B INIT 0\nFLOW f INTO B OUTOF A = A\n")
    run = simulate(model, SimSpec(0, 1, 0.5))
    assert run["A"] == [1.0, 0.5, 0.25] and run["B"] == [0.0, 0.5, 0.75]


def test_smooth_first_order():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nAUX s = SMOOTH(STEP(1, 1), 2)\n")
    run = simulate(model, SimSpec(0, 4, 1))
    assert run["s"] == pytest.approx([0.0, 0.0, 0.5, 0.75, 0.875])


def test_smooth_starts_at_input():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nAUX s = SMOOTH(3, 2)\n")
    assert simulate(model, SimSpec(0, 3, 1))["s"] == [3.0] * 4


def test_smooth_in_untaken_branch_initialises_when_reached():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nAUX s = IF_POSITIVE(t0, SMOOTH(5, 2), 0)\nAUX t0 = RAMP(1, 1)\n")
    run = simulate(model, SimSpec(0, 4, 1))
    assert run.completed
    assert run["s"] == [0.0, 0.0, 5.0, 5.0, 5.0]


def test_delay_fixed_shifts_input():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nAUX x = RAMP(1, 0)\nAUX d = DELAY_FIXED(x, 3)\n")
    run = simulate(model, SimSpec(0, 8, 1))
    assert run["d"] == [0, 0, 0, 0, 1, 2, 3, 4, 5]


def test_delay_fixed_under_rk4_uses_step_start_inputs():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nAUX x = RAMP(1, 0)\nAUX d = DELAY_FIXED(x, 1)\n")
    run = simulate(model, SimSpec(0, 3, 0.5, RK4))
    assert run["d"] == [0, 0, 0, 0.5, 1.0, 1.5, 2.0]


def test_delay_must_be_whole_steps():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nAUX d = DELAY_FIXED(1, 0.75)\n")
    with pytest.raises(ModelError):
        simulate(model, SimSpec(0, 2, 0.5))


def test_division_by_zero_aborts_with_partial_series():
    model = parse_model("MODEL m\nSTOCK S INIT 3\nFLOW f OUTOF S = 1\nAUX r = 1 / S\n")
    run = simulate(model, SimSpec(0, 5, 1))
    assert not run.completed
    assert run.status.time == 3 and run.status.variable == "r"
    assert run.times == [0, 1, 2] and run["S"] == [3, 2, 1]


def test_overflow_aborts():
    model = parse_model("MODEL m\nSTOCK S INIT 1\nFLOW f INTO S = S * S * 1e100\n")
    run = simulate(model, SimSpec(0, 10, 1))
    assert not run.completed


def test_output_stride_keeps_final_point():
    model = parse_model("MODEL m\nSTOCK S INIT 0\nFLOW f INTO S = 1\n")
    run = simulate(model, SimSpec(0, 10, 1, output_stride=4))
    assert run.times == [0, 4, 8, 10] and run["S"] == [0, 4, 8, 10]


@pytest.mark.parametrize("kwargs", [
    dict(t_start=0, t_stop=1, dt=0.3),
    dict(t_start=1, t_stop=1, dt=1),
    dict(t_start=0, t_stop=1, dt=0),
    dict(t_start=0, t_stop=1, dt=0.5, method="heun"),
    dict(t_start=0, t_stop=1, dt=0.5, output_stride=0),
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        SimSpec(**kwargs)


def test_reference_spec():
    assert (REFERENCE_SPEC.t_start, REFERENCE_SPEC.t_stop, REFERENCE_SPEC.dt, REFERENCE_SPEC.n_steps) == (1, 60, 1, 59)


def test_runs_are_deterministic(bundle):
    overrides = bundle.overrides("traditional")
    assert simulate(bundle.model, REFERENCE_SPEC, overrides) == simulate(bundle.model, REFERENCE_SPEC, overrides)


def test_compiled_model_serves_many_overrides(bundle):
    cm = CompiledModel(bundle.model)
    a = cm.run(REFERENCE_SPEC, bundle.overrides("traditional"))
    b = cm.run(REFERENCE_SPEC, bundle.overrides("selfservice"))
    assert a == simulate(bundle.model, REFERENCE_SPEC, bundle.overrides("traditional"))
    assert a.final("acceptance") != b.final("acceptance")


def test_constants_are_recorded(bundle):
    run = simulate(bundle.model, REFERENCE_SPEC, OverrideSet.of(fear_of_losing_position=3.2))
    assert run["fear_of_losing_position"] == [3.2] * 60


def _interpreted_first_values(model):
    env = dict(model.constants)
    env.update(initial_values(model))
    for name in evaluation_order(model):
        env[name] = eval_expression(model.variables[name].equation, env, 0.0, model.tables, name)
    return env


@pytest.mark.parametrize("seed", range(40))
def test_compiled_code_agrees_with_interpreter(seed):
    model = random_model(random.Random(seed))
    run = simulate(model, SimSpec(0, 1, 1))
    try:
        expected = _interpreted_first_values(model)
    except EvaluationError:
        assert not run.completed and run.times == []
        return
    assert run.times[0] == 0.0
    for name, value in expected.items():
        assert run[name][0] == value or (math.isnan(value) and math.isnan(run[name][0]))
