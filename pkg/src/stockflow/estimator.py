"""scikit-learn wrapper around trajectory calibration.

``X`` holds sample times (one column), ``y`` the observed values of one
model variable at those times. ``fit`` runs :func:`calibrate`; ``predict``
simulates with the fitted constants and reads the variable at each time.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .calibration import LOG, CalibrationProblem, FreeParameter, Sample, Target, calibrate
from .engine import EULER, SimSpec, simulate
from .model import Model, OverrideSet, Set, compose
from .parser import parse_model


class TrajectoryCalibrator(RegressorMixin, BaseEstimator):
    """Fit model constants so that ``variable`` tracks the observations.

    Parameters
    ----------
    model : Model or str
        Parsed model or DSL text.
    variable : str
        Observed variable.
    free : sequence of (name, lower, upper, guess)
    t_start, t_stop, dt, method : simulation frame
    condition : OverrideSet, optional
        Overrides applied on top of the fitted constants, e.g. a strategy.
    loss_scale : "log" or "linear"
    """

    def __init__(self, model=None, variable="", free=(), t_start=1.0, t_stop=60.0, dt=1.0,
                 method=EULER, condition=None, loss_scale=LOG):
        self.model = model
        self.variable = variable
        self.free = free
        self.t_start = t_start
        self.t_stop = t_stop
        self.dt = dt
        self.method = method
        self.condition = condition
        self.loss_scale = loss_scale

    def _model(self) -> Model:
        if isinstance(self.model, Model):
            return self.model
        if isinstance(self.model, str):
            return parse_model(self.model)
        raise ValueError("model must be a Model or model text")

    def _spec(self) -> SimSpec:
        return SimSpec(float(self.t_start), float(self.t_stop), float(self.dt), self.method)

    def _times(self, X):
        X = check_array(X, ensure_2d=False)
        return np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y, ensure_2d=False, y_numeric=True)
        times = self._times(X)
        weights = np.ones_like(y, dtype=float) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if weights.shape != y.shape:
            raise ValueError("sample_weight must match y")
        samples = tuple(Sample(float(t), float(v), float(w)) for t, v, w in zip(times, y, weights))
        problem = CalibrationProblem(
            self._model(), self._spec(), tuple(FreeParameter(*p) for p in self.free),
            (Target(self.variable, samples, self.condition or OverrideSet()),), self.loss_scale,
        )
        fit = calibrate(problem)
        self.params_ = dict(fit.values)
        self.loss_ = fit.loss
        self.n_evaluations_ = fit.evaluations
        self.converged_ = fit.converged
        self.n_features_in_ = 1
        return self

    def simulate(self):
        """Full run under the fitted constants."""
        check_is_fitted(self, "params_")
        fitted = OverrideSet({k: Set(float(v)) for k, v in self.params_.items()})
        return simulate(self._model(), self._spec(), compose(fitted, self.condition or OverrideSet()))

    def predict(self, X):
        check_is_fitted(self, "params_")
        times = self._times(X)
        run = self.simulate()
        if not run.completed:
            raise RuntimeError(f"simulation aborted: {run.status}")
        return np.array([run.at(self.variable, float(t)) for t in times])

