import numpy as np
import pytest
from scipy.integrate import dblquad
from scipy.stats import ks_2samp, norm

from transcal.embedded import (DEFAULT_R, EmbeddedParams, draw_xi_bank, embedded_box,
                               embedded_calibrate, embedded_log_likelihood, embedded_prior_logpdf,
                               pc_embed, pushforward_sample)
from transcal.likelihood import CountingPredictor, EvalCounter, MeasurementModel
from transcal.testbed import DEFAULT_LAMBDA0


class FunctionPredictor:
    """Deterministic toy predictor ``f_j(lam) = fn(lam) + offsets[j]``."""

    def __init__(self, fn, offsets, var=0.0):
        self.fn, self.offsets, self.var = fn, np.asarray(offsets, float), var

    @property
    def n_outputs(self):
        return len(self.offsets)

    def subset(self, idx):
        return FunctionPredictor(self.fn, self.offsets[list(idx)], self.var)

    def predict(self, lams):
        lams = np.atleast_2d(lams)
        f = self.fn(lams)[:, None] + self.offsets
        return f, np.full_like(f, self.var)


def toy_fn(lams):
    return np.sin(3 * lams[:, 0]) + lams[:, 1] ** 2


def toy_model(var=0.0, y=(0.4, 0.9, 1.2), sigma=0.1):
    return MeasurementModel(np.asarray(y), sigma, FunctionPredictor(toy_fn, [0.0, 0.5, 0.8], var))


def test_pc_embed_examples():
    l1, l2 = np.array([0.3, 0.6]), np.array([0.1, 0.2])
    assert np.array_equal(pc_embed(l1, np.zeros(2), [0.7, -0.4]), l1)
    assert np.allclose(pc_embed(l1, l2, np.ones(2)), l1 + l2)
    xi = draw_xi_bank(2, 1000, seed=0)
    assert np.all((xi >= -1) & (xi <= 1))
    pts = pc_embed(l1, l2, xi)
    assert np.all((pts > 0) & (pts < 1))


def test_prior_examples():
    xi = draw_xi_bank(6, 4, 0)
    assert embedded_prior_logpdf(EmbeddedParams(np.full(6, 0.5), np.full(6, 0.2), xi)) == 0.0
    assert embedded_prior_logpdf(EmbeddedParams(np.full(6, 0.5), np.full(6, 0.6), xi)) == -np.inf
    assert embedded_prior_logpdf(EmbeddedParams(np.full(6, 0.5), np.zeros(6), xi)) == -np.inf
    assert embedded_prior_logpdf(EmbeddedParams(np.full(6, 0.9), np.full(6, 0.2), xi)) == -np.inf
    assert EmbeddedParams.from_vector(np.r_[np.full(6, 0.5), np.full(6, 0.2)], xi).is_feasible()


def test_zero_width_reduces_to_plain_likelihood():
    model = toy_model()
    lam = np.array([0.3, 0.7])
    prm = EmbeddedParams(lam, np.zeros(2), draw_xi_bank(2, 8, 1))
    assert embedded_log_likelihood(prm, model) == pytest.approx(model.log_likelihood(lam), abs=1e-12)


def test_small_width_close_to_plain_likelihood():
    model = toy_model(y=(1.2, 1.8, 2.1))
    lam = np.array([0.3, 0.7])
    prm = EmbeddedParams(lam, np.full(2, 1e-4), draw_xi_bank(2, DEFAULT_R, 2))
    assert abs(embedded_log_likelihood(prm, model) - model.log_likelihood(lam)) < 1e-3


def test_likelihood_formula_and_gp_variance():
    model = toy_model(var=0.003)
    xi = draw_xi_bank(2, 50, 3)
    prm = EmbeddedParams(np.array([0.4, 0.5]), np.array([0.2, 0.3]), xi)
    f, _ = model.predictor.predict(pc_embed(prm.lambda1, prm.lambda2, xi))
    s2 = f.var(0, ddof=1) + 0.003 + 0.01
    expected = norm.logpdf(model.y_obs, f.mean(0), np.sqrt(s2)).sum()
    assert embedded_log_likelihood(prm, model) == pytest.approx(expected, abs=1e-10)


def test_large_bank_moments_match_quadrature():
    l1, l2 = np.array([0.4, 0.5]), np.array([0.2, 0.3])

    def g(u, v):
        return np.sin(3 * (l1[0] + l2[0] * u)) + (l1[1] + l2[1] * v) ** 2

    mean = dblquad(lambda v, u: g(u, v) / 4, -1, 1, -1, 1)[0]
    second = dblquad(lambda v, u: g(u, v) ** 2 / 4, -1, 1, -1, 1)[0]
    var = second - mean**2
    xi = draw_xi_bank(2, 1_000_000, 4)
    f = toy_fn(pc_embed(l1, l2, xi))
    se_mean = f.std() / np.sqrt(len(f))
    se_var = np.sqrt(np.var((f - f.mean()) ** 2) / len(f))
    assert abs(f.mean() - mean) < 3 * se_mean
    assert abs(f.var(ddof=1) - var) < 3 * se_var


def test_cost_is_bank_size_times_outputs():
    counter = EvalCounter()
    base = toy_model()
    model = MeasurementModel(base.y_obs, 0.1, CountingPredictor(base.predictor, counter))
    prm = EmbeddedParams(np.array([0.4, 0.5]), np.array([0.2, 0.3]), draw_xi_bank(2, 17, 0))
    embedded_log_likelihood(prm, model)
    assert sum(counter.counts.values()) == 17 * 3


def test_single_chaos_sample_rejected():
    prm = EmbeddedParams(np.array([0.4, 0.5]), np.array([0.2, 0.3]), draw_xi_bank(2, 1, 0))
    with pytest.raises(ValueError):
        embedded_log_likelihood(prm, toy_model())


def test_default_bank_size_resolves_testbed_means(testbed_data):
    # the smallest power of two whose median relative error on the output means is under 1 %
    _, _, _, model = testbed_data
    l1 = np.array(DEFAULT_LAMBDA0)
    l2 = 0.9 * np.minimum(l1, 1 - l1)
    ref = model.predictor.predict(pc_embed(l1, l2, draw_xi_bank(6, 200_000, 0)))[0].mean(0)

    def median_error(R):
        errs = [np.max(np.abs(model.predictor.predict(pc_embed(l1, l2, draw_xi_bank(6, R, s)))[0]
                              .mean(0) / ref - 1)) for s in range(1, 21)]
        return np.median(errs)

    assert median_error(DEFAULT_R) < 0.01
    assert median_error(DEFAULT_R // 2) > 0.01


def constrained_uniform_oracle(q, size, seed):
    """Rejection sampler for the feasible set of (lambda1, lambda2)."""
    rng = np.random.default_rng(seed)
    box = embedded_box(q)
    out = []
    while sum(len(o) for o in out) < size:
        c = rng.uniform(box[:, 0], box[:, 1], (4 * size, 2 * q))
        l1, l2 = c[:, :q], c[:, q:]
        ok = np.all((l2 > 0) & (l1 - l2 > 0) & (l1 + l2 < 1), axis=1)
        out.append(c[ok])
    return np.vstack(out)[:size]


def test_flat_likelihood_chain_matches_constrained_prior():
    q, M = 2, 100_000
    res = embedded_calibrate(None, M, R=2, seed=1, thin=1, q=q, log_likelihood=lambda prm: 0.0)
    ref = constrained_uniform_oracle(q, M, seed=0)
    for j in range(2 * q):
        assert ks_2samp(res.chain.samples[:, j], ref[:, j]).statistic < 0.05


def test_calibrate_structure_and_feasibility():
    model = toy_model()
    res = embedded_calibrate(model, 200, R=8, seed=5, q=2)
    assert len(res.chain) == 200
    assert res.pushforward.shape == (200 * 8, 2)
    assert np.all((res.pushforward > 0) & (res.pushforward < 1))
    assert res.ensemble.M == 1600
    again = embedded_calibrate(model, 200, R=8, seed=5, q=2)
    assert np.array_equal(res.chain.samples, again.chain.samples)


def test_pushforward_ordering():
    theta = np.array([[0.5, 0.5, 0.1, 0.2], [0.4, 0.6, 0.3, 0.1]])
    xi = np.array([[1.0, -1.0], [0.0, 0.5]])
    pts = pushforward_sample(theta, xi)
    assert np.allclose(pts, [[0.6, 0.3], [0.5, 0.6], [0.7, 0.5], [0.4, 0.65]])
