import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from isocloth.calibration import CalibrationProblem, FitError, ParameterFitter, fit, loss, resample_recording
from isocloth.dynamics import simulate
from isocloth.experiments import shaking_doc
from isocloth.scenario import from_dict

TRUTH = (0.52, 2.69)


def small_doc(delta=TRUTH[0], alpha=TRUTH[1]):
    doc = shaking_doc(5, "fast", delta, alpha, duration=3.0)
    doc["integrator"]["dt"] = 0.02
    return doc


@pytest.fixture(scope="module")
def problem():
    reference = simulate(from_dict(small_doc())).frames
    return CalibrationProblem(from_dict(small_doc(0.4, 1.5)), reference)


def test_windows(problem):
    assert problem.frames == 151
    assert problem.fit_window == (1, 76)


def test_self_loss_and_separation(problem):
    base = loss(problem, *TRUTH)
    assert base <= 1e-10
    assert loss(problem, TRUTH[0] + 0.1, TRUTH[1]) > base
    assert loss(problem, -0.1, 1.0) == np.inf
    assert loss(problem, 0.5, 11.0) == np.inf


def test_handles_only_reference_is_flat():
    doc = small_doc()
    doc["handles"] = [{"within": {"center": [0, 0, 0], "radius": 10.0},
                       "motion": {"type": "oscillation", "amplitude": 0.075, "frequency": 0.6, "axis": "x", "start": 1.0}}]
    sc = from_dict(doc)
    pb = CalibrationProblem(sc, simulate(sc).frames)
    values = {loss(pb, d, a) for d, a in [(0.1, 0.5), (0.52, 2.69), (1.5, 8.0)]}
    assert values == {0.0}


def test_shape_checks():
    sc = from_dict(small_doc())
    with pytest.raises(ValueError):
        CalibrationProblem(sc, np.zeros((1, 3 * sc.mesh.n)))
    with pytest.raises(ValueError):
        CalibrationProblem(sc, np.zeros((4, 3)))


def test_all_divergent_simplex(problem):
    with pytest.raises(FitError):
        fit(problem, start=(5.0, 50.0))


@pytest.mark.slow
def test_fit_recovers_and_is_deterministic(problem):
    r1 = fit(problem, (0.4, 1.5))
    assert abs(r1.delta - TRUTH[0]) <= 0.05 and abs(r1.alpha - TRUTH[1]) <= 0.05
    assert r1.test_error <= 5e-4 and r1.test_node_error <= 5e-4
    # never worse than the best starting vertex
    start_losses = [loss(problem, 0.4, 1.5), loss(problem, 0.5, 1.5), loss(problem, 0.4, 2.0)]
    assert r1.loss <= min(start_losses)
    r2 = fit(CalibrationProblem(problem.scenario, problem.reference), (0.4, 1.5))
    assert r2.to_dict() == r1.to_dict()
    r3 = fit(problem, (0.7, 4.0))
    assert abs(r3.delta - r1.delta) <= 1e-2 and abs(r3.alpha - r1.alpha) <= 1e-2


@pytest.mark.slow
def test_estimator_front_end(problem):
    est = ParameterFitter(scenario=problem.scenario, start=(0.45, 2.2))
    with pytest.raises(NotFittedError):
        est.predict()
    assert clone(est).get_params()["start"] == (0.45, 2.2)
    est.fit(problem.reference)
    assert abs(est.delta_ - TRUTH[0]) <= 0.05 and abs(est.alpha_ - TRUTH[1]) <= 0.05
    assert est.predict().shape == problem.reference.shape
    assert -5e-4 <= est.score(problem.reference) <= 0


def test_resample_recording():
    t = np.array([0.0, 0.1, 0.3])
    P = np.zeros((3, 2, 3))
    P[:, 1, 2] = [0.0, 1.0, 3.0]
    frames = resample_recording(t, P, 0.05)
    assert frames.shape == (7, 6)
    np.testing.assert_allclose(frames[:, 5], [0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    with pytest.raises(ValueError):
        resample_recording([0, 0], P[:2], 0.05)
