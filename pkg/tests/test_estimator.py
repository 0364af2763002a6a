import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stockflow.calibration import SYNTHETIC_MODEL, growth_recurrence
from stockflow.estimator import TrajectoryCalibrator
from stockflow.model import OverrideSet

FREE = (("drive", 0.05, 0.25, 0.1), ("a0", 1e-5, 1e-3, 1e-4))


@pytest.fixture
def data():
    y = np.array(growth_recurrence(0.15, 3e-4))[1:]
    X = np.arange(2.0, 61.0).reshape(-1, 1)
    return X, y


def test_fit_recovers_parameters(data):
    X, y = data
    est = TrajectoryCalibrator(SYNTHETIC_MODEL, "A", FREE).fit(X, y)
    assert est.params_["drive"] == pytest.approx(0.15, rel=0.01)
    assert est.params_["a0"] == pytest.approx(3e-4, rel=0.01)
    assert est.score(X, y) > 0.999999


def test_predict_reads_the_grid(data):
    X, y = data
    est = TrajectoryCalibrator(SYNTHETIC_MODEL, "A", FREE).fit(X, y)
    assert est.predict([10.0, 60.0]) == pytest.approx([y[8], y[-1]], rel=1e-4)
    with pytest.raises(KeyError):
        est.predict([10.5])


def test_params_and_clone():
    est = TrajectoryCalibrator(SYNTHETIC_MODEL, "A", FREE, loss_scale="linear")
    params = est.get_params()
    assert params["variable"] == "A" and params["loss_scale"] == "linear"
    other = clone(est)
    assert other.get_params()["free"] == FREE
    other.set_params(dt=0.5)
    assert other.dt == 0.5 and est.dt == 1.0


def test_not_fitted():
    with pytest.raises(NotFittedError):
        TrajectoryCalibrator(SYNTHETIC_MODEL, "A", FREE).predict([2.0])


def test_input_validation(data):
    X, y = data
    est = TrajectoryCalibrator(SYNTHETIC_MODEL, "A", FREE)
    with pytest.raises(ValueError):
        est.fit(X, y[:-1])
    with pytest.raises(ValueError):
        est.fit(X, y, sample_weight=np.ones(3))
    with pytest.raises(ValueError):
        TrajectoryCalibrator(None, "A", FREE).fit(X, y)


def test_condition_and_weights(data):
    X, y = data
    # with drive forced to a fixed value the fit can only move a0
    est = TrajectoryCalibrator(SYNTHETIC_MODEL, "A", (FREE[1],), condition=OverrideSet.of(drive=0.15))
    est.fit(X, y, sample_weight=np.linspace(0.5, 2.0, len(y)))
    assert est.params_["a0"] == pytest.approx(3e-4, rel=1e-3)
    assert est.simulate().at("drive", 5.0) == 0.15
