"""Embedded-discrepancy baseline with a first-order Legendre-uniform chaos.

Each parameter is randomized as ``lambda1 + lambda2 * xi`` with
``xi ~ U[-1, 1]^q``; the location/half-width pair ``(lambda1, lambda2)`` is
calibrated. The likelihood replaces the pushforward distribution of every
observed output by a normal with matching first two moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hier import PosteriorEnsemble, chain_config, plug_in_ensemble
from .likelihood import LOG_2PI
from .mcmc import Chain, sample
from .seeding import derive
from .testbed import Q_DIM

DEFAULT_R = 64
LAMBDA2_MAX = 0.5


@dataclass
class EmbeddedParams:
    lambda1: np.ndarray
    lambda2: np.ndarray
    xi_bank: np.ndarray

    @property
    def R(self) -> int:
        return len(self.xi_bank)

    @classmethod
    def from_vector(cls, theta, xi_bank) -> "EmbeddedParams":
        theta = np.asarray(theta, dtype=float)
        q = len(theta) // 2
        return cls(theta[:q], theta[q:], xi_bank)

    def is_feasible(self) -> bool:
        return embedded_prior_logpdf(self) == 0.0


def draw_xi_bank(q: int, R: int = DEFAULT_R, seed=None) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(R, q))


def pc_embed(lambda1, lambda2, xi):
    """``lambda1 + lambda2 * xi`` elementwise (broadcasts over leading axes of ``xi``)."""
    return np.asarray(lambda1, dtype=float) + np.asarray(lambda2, dtype=float) * np.asarray(xi, dtype=float)


def embedded_prior_logpdf(params) -> float:
    """Unnormalized uniform on ``{lambda2 > 0, lambda1 - lambda2 > 0, lambda1 + lambda2 < 1}``."""
    l1, l2 = np.asarray(params.lambda1), np.asarray(params.lambda2)
    ok = np.all(l2 > 0) and np.all(l1 - l2 > 0) and np.all(l1 + l2 < 1)
    return 0.0 if ok else -np.inf


def embedded_log_likelihood(params: EmbeddedParams, measurement_model) -> float:
    """Independent-normal approximation of the pushforward likelihood.

    Costs exactly ``R * n`` surrogate evaluations.
    """
    if params.R < 2:
        raise ValueError("need R >= 2 chaos samples to estimate a variance")
    pts = pc_embed(params.lambda1, params.lambda2, params.xi_bank)
    f, v = measurement_model.predictor.predict(pts)
    mu = f.mean(0)
    s2 = f.var(0, ddof=1) + v.mean(0) + measurement_model.sigma_eps**2
    val = -0.5 * float(np.sum(LOG_2PI + np.log(s2) + (measurement_model.y_obs - mu) ** 2 / s2))
    return val if np.isfinite(val) else -np.inf


@dataclass
class EmbeddedResult:
    chain: Chain
    xi_bank: np.ndarray
    pushforward: np.ndarray

    @property
    def ensemble(self) -> PosteriorEnsemble:
        return plug_in_ensemble(self.pushforward)


def pushforward_sample(theta_samples, xi_bank) -> np.ndarray:
    """All ``lambda1_k + lambda2_k * xi_r``, shape ``(M * R, q)``."""
    theta_samples = np.atleast_2d(theta_samples)
    q = theta_samples.shape[1] // 2
    pts = pc_embed(theta_samples[:, None, :q], theta_samples[:, None, q:], xi_bank[None, :, :])
    return pts.reshape(-1, q)


def embedded_box(q: int) -> np.ndarray:
    return np.vstack([np.tile([0.0, 1.0], (q, 1)), np.tile([0.0, LAMBDA2_MAX], (q, 1))])


def embedded_calibrate(measurement_model, M: int, R: int = DEFAULT_R, seed=None,
                       thin: int = 10, burn_frac: float = 0.2, q: int = Q_DIM,
                       init=None, mcmc_config=None, log_likelihood=None) -> EmbeddedResult:
    """DRAM over ``(lambda1, lambda2)`` with one chaos bank frozen for the whole chain.

    ``log_likelihood`` overrides the embedded likelihood (used for prior checks).
    """
    xi_seed, chain_seed = derive(seed, 0), derive(seed, 1)
    xi = draw_xi_bank(q, R, xi_seed)
    loglik = log_likelihood or (lambda prm: embedded_log_likelihood(prm, measurement_model))

    def log_target(theta):
        prm = EmbeddedParams.from_vector(theta, xi)
        if embedded_prior_logpdf(prm) == -np.inf:
            return -np.inf
        return loglik(prm)

    if init is None:
        init = np.concatenate([np.full(q, 0.5), np.full(q, 0.1)])
    cfg = mcmc_config or chain_config(M, thin, burn_frac, chain_seed, np.asarray(init, dtype=float))
    chain = sample(log_target, embedded_box(q), cfg)
    return EmbeddedResult(chain, xi, pushforward_sample(chain.samples, xi))
