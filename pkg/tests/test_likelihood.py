import numpy as np
import pytest
from scipy.stats import norm

from transcal.likelihood import (CountingPredictor, EvalCounter, ExactPredictor, MeasurementModel,
                                 build_model, log_likelihood, loo_model)
from transcal.testbed import GroundTruthConfig, generate_observations


class ConstPredictor:
    def __init__(self, mean, var):
        self.mean, self.var = np.asarray(mean, float), np.asarray(var, float)

    @property
    def n_outputs(self):
        return len(self.mean)

    def subset(self, idx):
        idx = list(idx)
        return ConstPredictor(self.mean[idx], self.var[idx])

    def predict(self, lams):
        m = len(np.atleast_2d(lams))
        return np.tile(self.mean, (m, 1)), np.tile(self.var, (m, 1))


def test_gaussian_with_surrogate_variance():
    y = np.array([0.1, 0.5, -0.2])
    pred = ConstPredictor([0.0, 0.4, 0.0], [0.01, 0.0, 0.04])
    model = MeasurementModel(y, 0.1, pred)
    expected = norm.logpdf(y, pred.mean, np.sqrt(0.01 + pred.var)).sum()
    assert log_likelihood(model, np.zeros(6)) == pytest.approx(expected, abs=1e-12)


def test_exact_predictor_matches_simulator(testbed_data):
    problem, obs, source, model = testbed_data
    lam = np.random.default_rng(0).random((4, 6))
    mean, var = model.predictor.predict(lam)
    assert mean.shape == (4, obs.n) and np.all(var == 0)
    direct = problem.evaluate(obs.points[None], lam[:, None])[..., obs.t_obs - 1]
    assert np.allclose(mean, direct)
    ll = model.log_likelihood_many(lam)
    ref = norm.logpdf(obs.values, direct, obs.sigma_eps).sum(1)
    assert np.allclose(ll, ref)


def test_truth_beats_far_point_without_model_error(testbed_data):
    problem, obs, source, _ = testbed_data
    clean = generate_observations(problem, GroundTruthConfig(delta_v=0.0), obs.design, 0.01, seed=1)
    model = build_model(clean, source)
    assert model.log_likelihood(np.array(obs.lambda0)) > model.log_likelihood(np.ones(6))


def test_loo_drops_one_observation(testbed_data):
    _, obs, _, model = testbed_data
    fold = loo_model(model, 3)
    assert fold.n == obs.n - 1
    assert 3 not in fold.point_ids
    lam = np.full((1, 6), 0.5)
    keep = [i for i in range(obs.n) if i != 3]
    assert np.allclose(fold.predictor.predict(lam)[0], model.predictor.predict(lam)[0][:, keep])
    with pytest.raises(IndexError):
        loo_model(model, obs.n)
    tiny = MeasurementModel(obs.values[:1], 0.1, ExactPredictor(*_first_point(testbed_data)))
    with pytest.raises(ValueError):
        loo_model(tiny, 0)


def _first_point(data):
    problem, obs, _, _ = data
    return problem, obs.points[:1], obs.t_obs


def test_counter_attributes_stages(testbed_data):
    _, obs, source, _ = testbed_data
    counter = EvalCounter()
    model = build_model(obs, source, counter)
    with counter.stage("map"):
        model.log_likelihood_many(np.random.default_rng(0).random((7, 6)))
    model.log_likelihood(np.full(6, 0.5))
    assert counter.as_dict() == {"map": 7 * obs.n, "other": obs.n}
    fold = loo_model(model, 0)
    assert isinstance(fold.predictor, CountingPredictor)
    with counter.stage("map"):
        fold.log_likelihood(np.full(6, 0.5))
    assert counter.counts["map"] == 7 * obs.n + obs.n - 1


def test_validation():
    with pytest.raises(ValueError):
        MeasurementModel(np.zeros(2), 0.0, ConstPredictor([0, 0], [0, 0]))
    with pytest.raises(ValueError):
        MeasurementModel(np.zeros(3), 0.1, ConstPredictor([0, 0], [0, 0]))


def test_non_finite_prediction_maps_to_minus_inf():
    model = MeasurementModel(np.zeros(2), 0.1, ConstPredictor([np.nan, 0.0], [0.0, 0.0]))
    assert model.log_likelihood(np.zeros(6)) == -np.inf


def test_more_noise_flattens_likelihood(testbed_data):
    _, obs, _, model = testbed_data
    lams = np.random.default_rng(3).random((100, 6))
    gaps = []
    for sigma in (0.05, 0.1, 0.3):
        ll = MeasurementModel(obs.values, sigma, model.predictor).log_likelihood_many(lams)
        gaps.append(ll.max() - ll.min())
    assert gaps[0] > gaps[1] > gaps[2]


def test_continuous_along_segments(testbed_data):
    _, _, _, model = testbed_data
    rng = np.random.default_rng(4)
    for _ in range(5):
        a, b = rng.random(6), rng.random(6)
        t = np.linspace(0, 1, 2001)[:, None]
        ll = model.log_likelihood_many(a + t * (b - a))
        assert np.max(np.abs(np.diff(ll))) < 0.5
        assert model.log_likelihood(a) == model.log_likelihood(a)
