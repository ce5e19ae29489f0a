"""Hierarchical prior over augmented parameters and its importance-sampling machinery.

The first ``p`` parameters get a uniform prior on ``[0, 1]``; the remaining
``q - p`` model-error parameters get independent normals of fixed standard
deviation, truncated to ``[0, 1]``, whose locations ``alpha`` are
hyperparameters. Every ``alpha`` gives a density supported on the whole unit
cube, so density ratios between two hyperparameter values are always defined.

The likelihood of ``alpha`` is estimated from one bank of prior draws made at
a reference ``alpha*``; the bank is re-centred iteratively on the current
maximizer. Predictions either plug in the final ``alpha*`` or average over
an MCMC sample of ``alpha`` by reweighting a single parameter chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri_exp
from scipy.stats import qmc

from .errors import SupportError
from .mcmc import Chain, McmcConfig, sample
from .seeding import derive

log = logging.getLogger(__name__)

SIGMA_PRIOR = 0.45
ALPHA_BOX = (-10.0, 10.0)
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_ndtr_diff(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, accurate deep in either tail."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    upper = a > 0
    # upper tail: Phi(b) - Phi(a) = Q(a) - Q(b), Q(x) = Phi(-x)
    hi = np.where(upper, log_ndtr(-a), log_ndtr(b))
    lo = np.where(upper, log_ndtr(-b), log_ndtr(a))
    with np.errstate(divide="ignore"):
        return hi + np.log1p(-np.exp(lo - hi))


@dataclass(frozen=True)
class HierPrior:
    """``1_[0,1]^p(lam[:p]) * prod_i TN(lam[p+i]; alpha_i, sigma^2, 0, 1)``."""

    p: int
    q: int
    sigma: float = SIGMA_PRIOR
    alpha_low: float = ALPHA_BOX[0]
    alpha_high: float = ALPHA_BOX[1]

    @property
    def r(self) -> int:
        return self.q - self.p

    @property
    def alpha_box(self) -> np.ndarray:
        return np.tile([self.alpha_low, self.alpha_high], (self.r, 1))

    def log_normalizer(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return log_ndtr_diff(-alpha / self.sigma, (1.0 - alpha) / self.sigma)

    def logpdf(self, lams, alpha):
        """Log density of each row of ``lams`` (``-inf`` outside the unit cube)."""
        alpha = np.asarray(alpha, dtype=float).reshape(1, self.r)
        return self.logpdf_grid(lams, alpha)[0]

    def logpdf_grid(self, lams, alphas):
        """Log densities for every ``(alpha_i, lam_k)`` pair, shape ``(N, M)``."""
        lams = np.atleast_2d(np.asarray(lams, dtype=float))
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        err = lams[None, :, self.p:]
        z = (err - alphas[:, None, :]) / self.sigma
        val = (-0.5 * z**2).sum(-1)
        val -= self.r * (LOG_SQRT_2PI + np.log(self.sigma))
        val -= self.log_normalizer(alphas).sum(-1)[:, None]
        inside = np.all((lams >= 0.0) & (lams <= 1.0), axis=1)
        return np.where(inside[None, :], val, -np.inf)

    def sample(self, alpha, size: int, rng) -> np.ndarray:
        """Exact draws: uniform block, then truncated normals by inverse CDF."""
        alpha = np.asarray(alpha, dtype=float).reshape(self.r)
        out = np.empty((size, self.q))
        out[:, :self.p] = rng.random((size, self.p))
        out[:, self.p:] = truncnorm_ppf(rng.random((size, self.r)), alpha, self.sigma)
        return out

    def tn_mean(self, alpha):
        """Mean of each truncated-normal coordinate."""
        alpha = np.asarray(alpha, dtype=float)
        a, b = -alpha / self.sigma, (1.0 - alpha) / self.sigma
        logz = log_ndtr_diff(a, b)
        phi_a = np.exp(-0.5 * a**2 - LOG_SQRT_2PI - logz)
        phi_b = np.exp(-0.5 * b**2 - LOG_SQRT_2PI - logz)
        return alpha + self.sigma * (phi_a - phi_b)


def truncnorm_ppf(u, mu, sigma, lower=0.0, upper=1.0):
    """Inverse CDF of ``N(mu, sigma^2)`` truncated to ``[lower, upper]``."""
    u = np.asarray(u, dtype=float)
    a = (lower - np.asarray(mu, dtype=float)) / sigma
    b = (upper - np.asarray(mu, dtype=float)) / sigma
    a, b, u = np.broadcast_arrays(a, b, u)
    upper_tail = a > 0
    with np.errstate(divide="ignore"):
        # work with survival functions when the interval sits in the upper tail
        lq_a, lq_b = log_ndtr(-a), log_ndtr(-b)
        z_up = -ndtri_exp(lq_a + np.log1p(-u * -np.expm1(lq_b - lq_a)))
        lp_a, lp_b = log_ndtr(a), log_ndtr(b)
        ratio = np.exp(lp_a - lp_b)
        z_lo = ndtri_exp(lp_b + np.log(ratio + u * (1.0 - ratio)))
    z = np.where(upper_tail, z_up, z_lo)
    return np.clip(np.asarray(mu) + sigma * z, lower, upper)


def prior_logpdf(prior: HierPrior, lam, alpha) -> float:
    return float(prior.logpdf(np.asarray(lam, dtype=float)[None, :], alpha)[0])


def uniform_log_prior(box) -> Callable:
    """Log density (up to a constant) of the uniform law on ``box``."""
    box = np.asarray(box, dtype=float)

    def log_p(alpha):
        alpha = np.asarray(alpha, dtype=float)
        inside = np.all((alpha >= box[:, 0]) & (alpha <= box[:, 1]), axis=-1)
        return np.where(inside, 0.0, -np.inf)[()]

    return log_p


# ----------------------------------------------------------------------------
# importance-sampling bank
# ----------------------------------------------------------------------------

@dataclass
class IsBank:
    prior: HierPrior
    alpha_ref: np.ndarray
    lambdas: np.ndarray
    cached_loglik: np.ndarray
    cached_logprior_ref: np.ndarray

    @property
    def L(self) -> int:
        return len(self.lambdas)

    def log_ratios(self, alphas) -> np.ndarray:
        """``log p(lam_k | alpha) - log p(lam_k | alpha_ref)``, shape ``(N, L)``."""
        return self.prior.logpdf_grid(self.lambdas, alphas) - self.cached_logprior_ref


def _evaluate_loglik(model, lambdas, chunk=2500):
    fn = getattr(model, "log_likelihood_many", model)
    return np.concatenate([np.asarray(fn(lambdas[i:i + chunk]), dtype=float)
                           for i in range(0, len(lambdas), chunk)])


def is_bank_build(prior: HierPrior, alpha_ref, L: int, measurement_model, seed=None) -> IsBank:
    """Draw ``L`` i.i.d. parameters at ``alpha_ref`` and cache their log-likelihoods.

    ``measurement_model`` is a :class:`MeasurementModel` or any vectorized
    callable mapping an ``(L, q)`` array to log-likelihoods.
    """
    if L < 1:
        raise ValueError("bank size must be at least 1")
    rng = np.random.default_rng(seed)
    alpha_ref = np.asarray(alpha_ref, dtype=float).reshape(prior.r)
    lambdas = prior.sample(alpha_ref, L, rng)
    loglik = _evaluate_loglik(measurement_model, lambdas)
    return IsBank(prior, alpha_ref, lambdas, loglik, prior.logpdf(lambdas, alpha_ref))


def is_loglik_alpha_many(bank: IsBank, alphas) -> np.ndarray:
    logw = bank.cached_loglik + bank.log_ratios(alphas)
    with np.errstate(invalid="ignore"):
        return logsumexp(logw, axis=1) - np.log(bank.L)


def is_loglik_alpha(bank: IsBank, alpha) -> float:
    """Log of the importance-sampling estimate of ``p(y | alpha)``."""
    return float(is_loglik_alpha_many(bank, np.atleast_2d(alpha))[0])


def is_log_standard_error(bank: IsBank, alpha) -> float:
    """Delta-method standard error of :func:`is_loglik_alpha`."""
    logw = bank.cached_loglik + bank.log_ratios(np.atleast_2d(alpha))[0]
    w = np.exp(logw - logw.max())
    if bank.L < 2 or w.mean() == 0:
        return np.inf
    return float(w.std(ddof=1) / (np.sqrt(bank.L) * w.mean()))


# ----------------------------------------------------------------------------
# iterative MAP
# ----------------------------------------------------------------------------

@dataclass
class MapResult:
    alpha_star: np.ndarray
    iterates: list
    converged: bool
    tau: float
    bank: IsBank = field(repr=False)

    @property
    def n_iterations(self) -> int:
        return len(self.iterates)

    def to_dict(self) -> dict:
        return {
            "alpha_star": self.alpha_star.tolist(),
            "converged": self.converged,
            "tau": self.tau,
            "iterates": [{"alpha": a.tolist(), "nu": float(nu)} for a, nu in self.iterates],
        }


_PENALTY = 1e30


def maximize_alpha(bank: IsBank, log_p_A: Callable, box, starts) -> np.ndarray:
    """Bounded quasi-Newton maximization of the estimated log posterior of ``alpha``."""
    box = np.asarray(box, dtype=float)

    def neg(alpha):
        lp = float(log_p_A(alpha))
        if not np.isfinite(lp):
            return _PENALTY
        v = is_loglik_alpha(bank, alpha) + lp
        return -v if np.isfinite(v) else _PENALTY

    best, best_val = None, np.inf
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), box[:, 0], box[:, 1])
        res = minimize(neg, x0, method="L-BFGS-B", bounds=list(map(tuple, box)))
        for cand, val in ((res.x, res.fun), (x0, neg(x0))):
            if val < best_val:
                best, best_val = np.asarray(cand, dtype=float), val
    return best


def map_iterate(prior: HierPrior, log_p_A: Callable | None, measurement_model, alpha0,
                tau: float = 0.05, L: int = 10_000, seed=None, max_iters: int = 20,
                n_starts: int = 5, box=None) -> MapResult:
    """Fixed-point iteration on the reference hyperparameter of the bank.

    Each pass draws a fresh bank at the current ``alpha*``, maximizes the
    estimated ``log p(y|alpha) + log p_A(alpha)`` from ``alpha*`` and
    ``n_starts - 1`` Latin-hypercube points, and stops once the step length
    drops to ``tau`` (Euclidean norm) or after ``max_iters`` passes.

    Without convergence the result is the bank reference whose own plain
    Monte Carlo estimate (no density ratios) was highest, together with that
    bank; ratio-weighted estimates far from the reference are too noisy to
    rank iterates.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    box = prior.alpha_box if box is None else np.asarray(box, dtype=float)
    log_p_A = log_p_A or uniform_log_prior(box)
    alpha = np.asarray(alpha0, dtype=float).reshape(prior.r)
    iterates = []
    converged = False
    bank = None
    # plain Monte Carlo estimate at each bank's own reference (all weights 1)
    best = (-np.inf, alpha, None)
    for it in range(max_iters):
        bank_seed, start_seed = derive(seed, it, 0), derive(seed, it, 1)
        bank = is_bank_build(prior, alpha, L, measurement_model, bank_seed)
        self_est = is_loglik_alpha(bank, alpha) + float(log_p_A(alpha))
        if self_est > best[0] or best[2] is None:
            best = (self_est, alpha, bank)
        extra = qmc.scale(qmc.LatinHypercube(d=prior.r, seed=np.random.default_rng(start_seed))
                          .random(max(n_starts - 1, 0)), box[:, 0], box[:, 1]) if n_starts > 1 else []
        new = maximize_alpha(bank, log_p_A, box, [alpha, *extra])
        nu = float(np.linalg.norm(new - alpha))
        iterates.append((new, nu))
        log.debug("MAP iteration %d: alpha=%s nu=%.4g", len(iterates), new, nu)
        alpha = new
        if nu <= tau:
            converged = True
            break
    if not converged:
        # fall back to the visited reference with the best self-referenced estimate
        _, alpha, bank = best
    return MapResult(alpha, iterates, converged, tau, bank)


# ----------------------------------------------------------------------------
# confidence levels
# ----------------------------------------------------------------------------

def confidence_levels(bank: IsBank, alphas, beta: float = 1.05,
                      log_p_A: Callable | None = None) -> np.ndarray:
    """Asymptotic confidence that ``p(alpha|y) < beta p(alpha*|y)`` for each row of ``alphas``.

    The bank must be drawn at ``alpha*``. All per-sample terms are rescaled by
    a common positive factor before use; the statistic is invariant to it.
    """
    if bank.L < 2:
        raise ValueError("need at least two bank samples")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    log_p_A = log_p_A or (lambda a: 0.0)
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    lpa = np.array([float(log_p_A(a)) for a in alphas])
    lpa_star = float(log_p_A(bank.alpha_ref))
    A = bank.cached_loglik + bank.log_ratios(alphas) + lpa[:, None]
    B = bank.cached_loglik + np.log(beta) + lpa_star
    shift = np.maximum(np.max(A, axis=1, initial=-np.inf), B.max())[:, None]
    with np.errstate(invalid="ignore"):
        c = np.exp(A - shift) - np.exp(B - shift)
    c = np.nan_to_num(c, nan=0.0)
    mean = c.mean(1)
    s = c.std(1, ddof=1)
    num = -np.sqrt(bank.L) * mean
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = ndtr(num / s)
    degenerate = s == 0
    gamma[degenerate] = np.where(num[degenerate] > 0, 1.0,
                                 np.where(num[degenerate] == 0, 0.5, 0.0))
    return gamma


def confidence_level(bank_prime: IsBank, alpha, beta: float = 1.05,
                     p_A: Callable | None = None) -> float:
    return float(confidence_levels(bank_prime, np.atleast_2d(alpha), beta, p_A)[0])


# ----------------------------------------------------------------------------
# posterior ensembles and estimators
# ----------------------------------------------------------------------------

@dataclass
class PosteriorEnsemble:
    """Parameter draws and an ``(N, M)`` matrix of row-normalized weights.

    Plug-in estimators are the special case ``N = 1`` with equal weights.
    """

    lambda_samples: np.ndarray
    weights: np.ndarray
    alpha_samples: np.ndarray | None = None
    alpha_star: np.ndarray | None = None

    @property
    def M(self) -> int:
        return len(self.lambda_samples)

    @property
    def N(self) -> int:
        return len(self.weights)

    @property
    def column_weights(self) -> np.ndarray:
        """Effective weight of each parameter draw (sums to one)."""
        return self.weights.mean(0)


def plug_in_ensemble(lambdas, alpha_star=None) -> PosteriorEnsemble:
    lambdas = np.asarray(lambdas, dtype=float)
    M = len(lambdas)
    return PosteriorEnsemble(lambdas, np.full((1, M), 1.0 / M), None, alpha_star)


def weight_matrix(prior: HierPrior, lambdas, alphas, alpha_star) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        logw = prior.logpdf_grid(lambdas, alphas) - prior.logpdf(lambdas, alpha_star)[None, :]
    norm = logsumexp(logw, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise SupportError("a weight row vanished: prior supports differ between alpha values")
    return np.exp(logw - norm)


def chain_config(n_keep: int, thin: int = 10, burn_frac: float = 0.2, seed=None,
                 init=None, **kw) -> McmcConfig:
    """MCMC settings that retain exactly ``n_keep`` samples."""
    kept_steps = n_keep * thin
    burn = int(np.ceil(kept_steps * burn_frac / (1.0 - burn_frac)))
    return McmcConfig(n_steps=burn + kept_steps, burn_in=burn, thin=thin, init=init,
                      seed=seed, **kw)


def _best_start(log_target, candidates):
    vals = np.array([log_target(c) for c in candidates])
    return candidates[int(np.argmax(vals))]


def sample_lambda_posterior(log_prior: Callable, measurement_model, box, n_keep: int,
                            seed=None, thin: int = 10, burn_frac: float = 0.2,
                            candidates=None) -> Chain:
    """DRAM chain on ``log p(y|lam) + log_prior(lam)`` over ``box``.

    The chain starts from the best of ``candidates`` (default: the box centre).
    """
    box = np.asarray(box, dtype=float)

    def log_target(lam):
        lp = log_prior(lam)
        if not np.isfinite(lp):
            return -np.inf
        return measurement_model.log_likelihood(lam) + lp

    init = 0.5 * (box[:, 0] + box[:, 1])
    if candidates is not None and len(candidates):
        init = _best_start(log_target, np.vstack([init[None, :], candidates]))
    return sample(log_target, box, chain_config(n_keep, thin, burn_frac, seed, init))


def hier_lambda_chain(prior: HierPrior, alpha_star, measurement_model, M: int, seed=None,
                      thin: int = 10, burn_frac: float = 0.2, bank: IsBank | None = None) -> Chain:
    """Posterior chain of the parameters under the prior fixed at ``alpha_star``."""
    alpha_star = np.asarray(alpha_star, dtype=float)
    cands = None
    if bank is not None:
        top = np.argsort(bank.cached_loglik)[-20:]
        cands = bank.lambdas[top]
    return sample_lambda_posterior(lambda lam: prior_logpdf(prior, lam, alpha_star),
                                   measurement_model, np.tile([0.0, 1.0], (prior.q, 1)),
                                   M, seed, thin, burn_frac, cands)


def alpha_box_around(prior: HierPrior, alpha_star, kappa: float) -> np.ndarray:
    """``[alpha* - kappa, alpha* + kappa]`` intersected with the hyperparameter box."""
    alpha_star = np.asarray(alpha_star, dtype=float)
    lo = np.maximum(alpha_star - kappa, prior.alpha_low)
    hi = np.minimum(alpha_star + kappa, prior.alpha_high)
    return np.column_stack([lo, hi])


def full_bayes_sample(prior: HierPrior, alpha_star, kappa: float, measurement_model,
                      bank: IsBank, N: int, M: int, seeds=(None, None), thin: int = 10,
                      burn_frac: float = 0.2, lambda_chain: Chain | None = None) -> PosteriorEnsemble:
    """Sample ``alpha`` from its estimated posterior and reweight one parameter chain.

    ``seeds`` holds the seeds of the hyperparameter chain and of the parameter
    chain. Pass ``lambda_chain`` to reuse a chain already run at ``alpha_star``.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    alpha_star = np.asarray(alpha_star, dtype=float).reshape(prior.r)
    box = alpha_box_around(prior, alpha_star, kappa)
    a_chain = sample(lambda a: is_loglik_alpha(bank, a), box,
                     chain_config(N, thin, burn_frac, seeds[0], alpha_star.copy()))
    if lambda_chain is None:
        lambda_chain = hier_lambda_chain(prior, alpha_star, measurement_model, M, seeds[1],
                                         thin, burn_frac, bank)
    lambdas = lambda_chain.samples
    W = weight_matrix(prior, lambdas, a_chain.samples, alpha_star)
    return PosteriorEnsemble(lambdas, W, a_chain.samples, alpha_star)


def posterior_expectation(ensemble: PosteriorEnsemble, h) -> float:
    """``(1/N) sum_i sum_k h(lam_k) w_ik`` with row-normalized weights.

    ``h`` is a vectorized callable on the ``(M, q)`` draws or precomputed values.
    """
    values = h(ensemble.lambda_samples) if callable(h) else h
    values = np.asarray(values, dtype=float)
    W = ensemble.weights
    # dividing by the row sums keeps h == 1 exact despite rounding in the weights
    return float(np.mean((W @ values) / W.sum(1)))


def _predict(surrogate, lams):
    mean, var = surrogate.predict(lams)
    mean, var = np.asarray(mean, dtype=float), np.asarray(var, dtype=float)
    return mean, var


def predictive_moments(ensemble: PosteriorEnsemble, surrogate):
    """Predictive mean and variance by the law of total variance.

    ``surrogate.predict`` may return ``(M,)`` arrays (one surrogate) or
    ``(M, S)`` arrays (a stack); the result matches that shape minus ``M``.
    """
    f, v = _predict(surrogate, ensemble.lambda_samples)
    w = ensemble.weights
    mean = np.mean(w @ f, axis=0)
    second = np.mean(w @ (f**2 + v), axis=0)
    var = np.maximum(second - mean**2, 0.0)
    if np.ndim(mean) == 0:
        return float(mean), float(var)
    return mean, var
