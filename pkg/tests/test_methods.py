import numpy as np
import pytest

from transcal.errors import ConfigError
from transcal.likelihood import EvalCounter, build_model
from transcal.methods import HIER_METHODS, METHODS, MethodConfig, calibrate

SMALL = MethodConfig(L=300, M=120, N=30, thin=2, max_iters=3, n_starts=2, R=4)


@pytest.mark.parametrize("field,value", [("L", 0), ("L_prime", 1), ("R", 1), ("beta", 0.99),
                                         ("tau", 0.0), ("burn_frac", 1.0), ("nominal_error", 1.5)])
def test_config_validation(field, value):
    with pytest.raises(ConfigError):
        MethodConfig(**{field: value}).validate()


def test_unknown_method():
    with pytest.raises(ConfigError):
        MethodConfig().validate("magic")
    assert set(HIER_METHODS) < set(METHODS)


@pytest.mark.parametrize("method", METHODS)
def test_each_method_returns_normalized_ensemble(testbed_data, method):
    problem, _, _, model = testbed_data
    res = calibrate(method, problem, model, SMALL, seed=0)
    ens = res.ensemble
    expected_m = SMALL.M * SMALL.R if method == "embedded" else SMALL.M
    assert ens.lambda_samples.shape == (expected_m, problem.q)
    assert np.allclose(ens.weights.sum(1), 1.0)
    assert np.all((ens.lambda_samples >= 0) & (ens.lambda_samples <= 1))
    mean, var = res.predict(model.predictor)
    assert mean.shape == (model.n,) and np.all(var >= 0)


def test_no_error_pins_error_block(testbed_data):
    problem, _, _, model = testbed_data
    res = calibrate("no_error", problem, model, SMALL, seed=1)
    assert np.all(res.ensemble.lambda_samples[:, problem.p:] == 0.5)
    assert res.chain.samples.shape[1] == problem.p


def test_hier_stage_shared_through_cache_and_bank_reuse(testbed_data):
    problem, obs, source, _ = testbed_data
    counter = EvalCounter()
    model = build_model(obs, source, counter)
    cache = {}
    hm = calibrate("hier_map", problem, model, SMALL, seed=2, counter=counter, cache=cache)
    after_map = dict(counter.counts)
    assert after_map["map"] == SMALL.L * obs.n * hm.map_result.n_iterations
    fb = calibrate("hier_full_bayes", problem, model, SMALL, seed=2, counter=counter, cache=cache)
    assert counter.counts["map"] == after_map["map"] and counter.counts["mcmc"] == after_map["mcmc"]
    assert fb.map_result is hm.map_result
    assert fb.ensemble.weights.shape == (SMALL.N, SMALL.M)
    assert np.all(np.abs(fb.ensemble.alpha_samples - hm.map_result.alpha_star) <= SMALL.kappa)


def test_rebuild_bank_is_counted_separately(testbed_data):
    problem, obs, source, _ = testbed_data
    counter = EvalCounter()
    model = build_model(obs, source, counter)
    cfg = MethodConfig(**{**SMALL.to_dict(), "rebuild_bank": True})
    calibrate("hier_full_bayes", problem, model, cfg, seed=3, counter=counter)
    assert counter.counts["bank"] == cfg.L * obs.n


def test_seed_determinism(testbed_data):
    problem, _, _, model = testbed_data
    a = calibrate("uniform_error", problem, model, SMALL, seed=7)
    b = calibrate("uniform_error", problem, model, SMALL, seed=7)
    c = calibrate("uniform_error", problem, model, SMALL, seed=8)
    assert np.array_equal(a.chain.samples, b.chain.samples)
    assert not np.array_equal(a.chain.samples, c.chain.samples)
