"""Stock-flow system dynamics: model DSL, fixed-step simulation, loop analysis,
scenario comparison and trajectory calibration."""
from .analysis import compare_runs, improvement_pct, monotonicity, sensitivity_sweep
from .calibration import CalibrationProblem, FreeParameter, Sample, Target, calibrate, grid_search_oracle
from .engine import EULER, RK4, Aborted, EvaluationError, RunResult, SimSpec, eval_expression, lookup_interpolate, simulate
from .loops import BALANCING, REINFORCING, UNDETERMINED, FeedbackLoop, find_feedback_loops
from .model import (
    Diagnostic, Model, ModelError, OverrideSet, Scale, Set, Variable, apply_overrides, compose,
    evaluation_order, validate_model,
)
from .parser import ParseError, parse_model, parse_override_set, serialize_model, serialize_override_set

__version__ = "0.1.0"

__all__ = [
    "BALANCING", "EULER", "REINFORCING", "RK4", "UNDETERMINED",
    "Aborted", "CalibrationProblem", "Diagnostic", "EvaluationError", "FeedbackLoop", "FreeParameter", "Model",
    "ModelError", "OverrideSet", "ParseError", "RunResult", "Sample", "Scale", "Set", "SimSpec", "Target", "Variable",
    "apply_overrides", "calibrate", "compare_runs", "compose", "eval_expression", "evaluation_order",
    "find_feedback_loops", "grid_search_oracle", "improvement_pct", "lookup_interpolate", "monotonicity",
    "parse_model", "parse_override_set", "sensitivity_sweep", "serialize_model", "serialize_override_set",
    "simulate", "validate_model",
]
