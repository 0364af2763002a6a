import math

import pytest

from stockflow.calibration import (
    LINEAR, LOG, SYNTHETIC_SUITE, CalibrationError, CalibrationProblem, FreeParameter, LossFunction, Sample,
    Target, calibrate, evaluate_loss, grid_search_oracle, growth_recurrence, load_calibration_config,
    read_samples, synthetic_problem, write_samples,
)
from stockflow.engine import SimSpec
from stockflow.model import OverrideSet
from stockflow.parser import parse_model
from stockflow.reference import FREE_PARAMETERS, reference_problem

RAMP_MODEL = parse_model("MODEL m\nSTOCK S INIT 0\nFLOW f INTO S = k\nCONST k = 0\n")
BOWL_MODEL = parse_model("MODEL m\nSTOCK S INIT 0\nAUX y = (p - 0.33)^2\nCONST p = 0.5\nCONST q = 0.5\n")


def test_perfect_candidate_has_zero_loss():
    problem = synthetic_problem(0.15, 3e-4)
    assert evaluate_loss(problem, {"drive": 0.15, "a0": 3e-4}) == pytest.approx(0, abs=1e-20)


def test_linear_loss_definition():
    problem = CalibrationProblem(
        RAMP_MODEL, SimSpec(1, 60, 1), (FreeParameter("k", 0, 1, 0.5),),
        (Target("S", (Sample(60.0, 1.0, 1.0),)),), LINEAR,
    )
    assert evaluate_loss(problem, {"k": 1.1 / 59}) == pytest.approx(0.01, rel=1e-9)


def test_log_loss_floors_small_values():
    problem = CalibrationProblem(
        RAMP_MODEL, SimSpec(1, 3, 1), (FreeParameter("k", 0, 1, 0.5),),
        (Target("S", (Sample(3.0, 1e-9, 2.0),)),), LOG,
    )
    # sim 0 and obs 1e-9 both floor at 1e-6
    assert evaluate_loss(problem, {"k": 0.0}) == 0.0
    assert evaluate_loss(problem, {"k": 0.5}) == pytest.approx(2 * (math.log(1.0) - math.log(1e-6)) ** 2)


def test_reference_loss_at_start_beats_zero_weights(bundle):
    problem = reference_problem(bundle)
    start = evaluate_loss(problem, problem.guess)
    zero = evaluate_loss(problem, {p.name: (p.lower if p.name == "a0" else 0.0) for p in FREE_PARAMETERS})
    assert math.isfinite(start) and start < zero


def test_aborted_candidate_costs_infinity():
    model = parse_model("MODEL m\nSTOCK S INIT 1\nFLOW f OUTOF S = k\nAUX r = 1 / S\nCONST k = 0\n")
    problem = CalibrationProblem(
        model, SimSpec(0, 4, 1), (FreeParameter("k", 0, 1, 0),), (Target("S", (Sample(4.0, 1.0),)),), LINEAR,
    )
    assert evaluate_loss(problem, {"k": 0.25}) == math.inf
    assert evaluate_loss(problem, {"k": 0.0}) == 0.0


def test_out_of_bounds_candidate_is_an_error():
    problem = synthetic_problem()
    with pytest.raises(CalibrationError):
        LossFunction(problem)({"drive": 0.5, "a0": 1e-4})


@pytest.mark.parametrize("kwargs", [
    dict(free=(FreeParameter("k", 1, 0, 0.5),)),
    dict(free=(FreeParameter("k", 0, 1, 2),)),
    dict(free=(FreeParameter("S", 0, 1, 0.5),)),
    dict(free=(FreeParameter("k", 0, 1, 0.5), FreeParameter("k", 0, 1, 0.5))),
    dict(targets=(Target("nope", (Sample(2.0, 1.0),)),)),
    dict(targets=(Target("S", (Sample(2.5, 1.0),)),)),
    dict(targets=(Target("S", (Sample(2.0, 1.0, -1.0),)),)),
    dict(loss_scale="cubic"),
])
def test_problem_validation(kwargs):
    args = dict(
        model=RAMP_MODEL, spec=SimSpec(1, 3, 1), free=(FreeParameter("k", 0, 1, 0.5),),
        targets=(Target("S", (Sample(2.0, 1.0),)),), loss_scale=LINEAR,
    )
    args.update(kwargs)
    with pytest.raises((CalibrationError, ValueError)):
        CalibrationProblem(**args)


def test_zero_free_parameters():
    problem = CalibrationProblem(RAMP_MODEL, SimSpec(1, 3, 1), (), (Target("S", (Sample(3.0, 1.0),)),), LINEAR)
    fit = calibrate(problem)
    assert fit.values == {} and fit.loss == evaluate_loss(problem, {})


@pytest.mark.parametrize("drive, a0, scale", SYNTHETIC_SUITE)
def test_synthetic_recovery(drive, a0, scale):
    fit = calibrate(synthetic_problem(drive, a0, scale))
    assert fit.values["drive"] == pytest.approx(drive, rel=0.01)
    assert fit.values["a0"] == pytest.approx(a0, rel=0.01)
    assert fit.converged


def test_calibrate_is_deterministic():
    problem = synthetic_problem()
    assert calibrate(problem) == calibrate(problem)


def test_calibrate_stays_in_bounds():
    # the optimum of this problem lies beyond the upper bound of k
    problem = CalibrationProblem(
        RAMP_MODEL, SimSpec(1, 3, 1), (FreeParameter("k", 0, 1, 0.5),), (Target("S", (Sample(3.0, 10.0),)),), LINEAR,
    )
    fit = calibrate(problem)
    assert fit.values["k"] == pytest.approx(1.0)


def test_grid_oracle_convex_1d():
    problem = CalibrationProblem(
        BOWL_MODEL, SimSpec(0, 1, 1), (FreeParameter("p", 0, 1, 0.5),), (Target("y", (Sample(0.0, 0.0),)),), LINEAR,
    )
    fit = grid_search_oracle(problem, 11)
    assert fit.values["p"] == pytest.approx(0.3)
    assert fit.evaluations == 11


def test_grid_oracle_corners():
    problem = CalibrationProblem(
        BOWL_MODEL, SimSpec(0, 1, 1), (FreeParameter("p", 0, 1, 0.5), FreeParameter("q", 0, 1, 0.5)),
        (Target("y", (Sample(0.0, 0.0),)),), LINEAR,
    )
    assert grid_search_oracle(problem, 2).evaluations == 4
    with pytest.raises(CalibrationError):
        grid_search_oracle(problem, 1)


def test_grid_oracle_agrees_with_calibrate():
    problem = synthetic_problem()
    grid = grid_search_oracle(problem, 50)
    fit = calibrate(problem)
    assert fit.loss <= 1.05 * grid.loss
    assert grid.values["drive"] == pytest.approx(0.15, abs=(0.25 - 0.05) / 49)


def test_growth_recurrence():
    assert growth_recurrence(0.1, 0.0, 3) == [0.0, 0.0, 0.0]
    assert growth_recurrence(0.5, 1.0, 3) == [0.0, 0.5, 1.25]


def test_samples_round_trip(tmp_path):
    samples = (Sample(2.0, 0.0001, 0.25), Sample(60.0, 1.8759, 100.0))
    write_samples(tmp_path / "s.csv", samples)
    assert read_samples(tmp_path / "s.csv") == samples


def test_config_reproduces_reference_problem(bundle):
    assert load_calibration_config(bundle.directory / "calibration.cfg") == reference_problem(bundle)


def test_config_errors(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("model = m.sdm\nfree = k 0 1\n")
    with pytest.raises(CalibrationError, match=":2:"):
        load_calibration_config(cfg)
    cfg.write_text("free = k 0 1 0.5\n")
    with pytest.raises(CalibrationError, match="missing model"):
        load_calibration_config(cfg)
    cfg.write_text("colour = blue\n")
    with pytest.raises(CalibrationError):
        load_calibration_config(cfg)


def test_condition_is_applied_after_candidate():
    # a condition that scales the free constant acts on the candidate value
    problem = CalibrationProblem(
        RAMP_MODEL, SimSpec(1, 3, 1), (FreeParameter("k", 0, 1, 0.5),),
        (Target("S", (Sample(3.0, 2.0),), OverrideSet.of(k=0.0).then(OverrideSet())),), LINEAR,
    )
    assert evaluate_loss(problem, {"k": 1.0}) == pytest.approx(4.0)
    from stockflow.model import Scale

    scaled = CalibrationProblem(
        RAMP_MODEL, SimSpec(1, 3, 1), (FreeParameter("k", 0, 1, 0.5),),
        (Target("S", (Sample(3.0, 2.0),), OverrideSet({"k": Scale(2.0)})),), LINEAR,
    )
    assert evaluate_loss(scaled, {"k": 0.5}) == pytest.approx(0.0)
