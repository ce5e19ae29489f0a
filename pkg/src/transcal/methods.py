"""The five calibration methods compared in the study, behind one entry point.

=================  ==========================================  ==================
tag                prior on the parameters                     estimator
=================  ==========================================  ==================
no_error           uniform on the physical block only          plug-in mean
uniform_error      uniform on the whole unit cube              plug-in mean
hier_map           hierarchical prior at the MAP ``alpha*``    plug-in mean
hier_full_bayes    hierarchical prior, ``alpha`` integrated    reweighted mean
embedded           chaos-embedded parameters                   pushforward mean
=================  ==========================================  ==================

``hier_map`` and ``hier_full_bayes`` share their MAP stage and parameter
chain when run with the same seed and a shared ``cache`` dictionary.
"""

from __future__ import annotations

import logging
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field

import numpy as np

from . import embedded as emb
from . import hier
from .errors import ConfigError
from .mcmc import Chain
from .seeding import derive

log = logging.getLogger(__name__)

METHODS = ("no_error", "uniform_error", "hier_map", "hier_full_bayes", "embedded")
HIER_METHODS = ("hier_map", "hier_full_bayes")

# stage keys for seed derivation; shared hierarchical stages use the same keys
_MAP, _LAMBDA, _ALPHA, _PLAIN, _EMBED, _REBUILD = range(6)


@dataclass
class MethodConfig:
    L: int = 10_000
    M: int = 3000
    N: int = 750
    L_prime: int = 20_000
    beta: float = 1.05
    kappa: float = 4.0
    tau: float = 0.05
    max_iters: int = 20
    alpha0: float = 0.5
    n_starts: int = 5
    R: int = emb.DEFAULT_R
    sigma_prior: float = hier.SIGMA_PRIOR
    thin: int = 10
    burn_frac: float = 0.2
    nominal_error: float = 0.5
    rebuild_bank: bool = False

    def validate(self, method: str | None = None) -> "MethodConfig":
        if method is not None and method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        for name in ("L", "M", "N", "L_prime", "max_iters", "n_starts", "R", "thin"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.L_prime < 2:
            raise ConfigError("L_prime must be at least 2")
        if self.R < 2:
            raise ConfigError("R must be at least 2")
        if not self.beta >= 1:
            raise ConfigError("beta must be >= 1")
        if not (self.kappa > 0 and self.tau > 0 and self.sigma_prior > 0):
            raise ConfigError("kappa, tau and sigma_prior must be positive")
        if not 0 <= self.burn_frac < 1:
            raise ConfigError("burn_frac must lie in [0, 1)")
        if not 0 <= self.nominal_error <= 1:
            raise ConfigError("nominal_error must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CalibrationResult:
    """Posterior ensemble of a method plus its stage artifacts."""

    method: str
    ensemble: hier.PosteriorEnsemble
    chain: Chain
    map_result: hier.MapResult | None = None
    embedded: emb.EmbeddedResult | None = None
    info: dict = field(default_factory=dict)

    def predict(self, predictor):
        """Predictive ``(mean, variance)`` of a predictor over the ensemble."""
        return hier.predictive_moments(self.ensemble, predictor)


class _FixedErrorModel:
    """Likelihood over the physical block with the error block pinned."""

    def __init__(self, model, p: int, nominal):
        self.model = model
        self.p = p
        self.nominal = np.asarray(nominal, dtype=float)

    def full(self, lams):
        lams = np.atleast_2d(lams)
        return np.hstack([lams, np.broadcast_to(self.nominal, (len(lams), len(self.nominal)))])

    def log_likelihood(self, lam) -> float:
        return self.model.log_likelihood(self.full(lam)[0])


def _stage(counter, name):
    return counter.stage(name) if counter is not None else nullcontext()


def _hier_stage(problem, model, cfg: MethodConfig, seed, counter):
    prior = hier.HierPrior(problem.p, problem.q, cfg.sigma_prior)
    with _stage(counter, "map"):
        res = hier.map_iterate(prior, None, model, np.full(prior.r, cfg.alpha0), cfg.tau, cfg.L,
                               derive(seed, _MAP), cfg.max_iters, cfg.n_starts)
    if not res.converged:
        log.warning("MAP iteration stopped after %d passes without meeting tau=%g",
                    res.n_iterations, cfg.tau)
    with _stage(counter, "mcmc"):
        chain = hier.hier_lambda_chain(prior, res.alpha_star, model, cfg.M, derive(seed, _LAMBDA),
                                       cfg.thin, cfg.burn_frac, res.bank)
    return prior, res, chain


def calibrate(method: str, problem, model, config: MethodConfig | None = None, seed=None,
              counter=None, cache: dict | None = None) -> CalibrationResult:
    """Run one calibration method on a measurement model.

    Parameters
    ----------
    method : str
        One of :data:`METHODS`.
    problem : CalibrationProblem
        Supplies the dimensions ``p`` and ``q``.
    model : MeasurementModel
    config : MethodConfig
    seed : int or SeedSequence
        Root seed; each stage derives its own stream from it.
    counter : EvalCounter, optional
        Stage labels ``map``, ``mcmc`` and ``bank`` are applied to the
        evaluations made here.
    cache : dict, optional
        Shared between calls on the same fold so the hierarchical methods
        reuse one MAP stage and one parameter chain.
    """
    cfg = (config or MethodConfig()).validate(method)
    q, p = problem.q, problem.p
    unit = np.tile([0.0, 1.0], (q, 1))

    if method == "no_error":
        nominal = np.full(q - p, cfg.nominal_error)
        fixed = _FixedErrorModel(model, p, nominal)
        with _stage(counter, "mcmc"):
            chain = hier.sample_lambda_posterior(lambda lam: 0.0, fixed, unit[:p], cfg.M,
                                                 derive(seed, _PLAIN), cfg.thin, cfg.burn_frac)
        return CalibrationResult(method, hier.plug_in_ensemble(fixed.full(chain.samples)), chain,
                                 info={"nominal_error": nominal.tolist()})

    if method == "uniform_error":
        with _stage(counter, "mcmc"):
            chain = hier.sample_lambda_posterior(lambda lam: 0.0, model, unit, cfg.M,
                                                 derive(seed, _PLAIN), cfg.thin, cfg.burn_frac)
        return CalibrationResult(method, hier.plug_in_ensemble(chain.samples), chain)

    if method == "embedded":
        with _stage(counter, "mcmc"):
            res = emb.embedded_calibrate(model, cfg.M, cfg.R, derive(seed, _EMBED), cfg.thin,
                                         cfg.burn_frac, q)
        return CalibrationResult(method, res.ensemble, res.chain, embedded=res)

    key = "hier_stage"
    if cache is not None and key in cache:
        prior, res, chain = cache[key]
    else:
        prior, res, chain = _hier_stage(problem, model, cfg, seed, counter)
        if cache is not None:
            cache[key] = (prior, res, chain)
    info = {"alpha_star": res.alpha_star.tolist(), "map_iterations": res.n_iterations,
            "map_converged": res.converged}
    if method == "hier_map":
        return CalibrationResult(method, hier.plug_in_ensemble(chain.samples, res.alpha_star),
                                 chain, res, info=info)

    bank = res.bank
    if cfg.rebuild_bank:
        with _stage(counter, "bank"):
            bank = hier.is_bank_build(prior, res.alpha_star, cfg.L, model, derive(seed, _REBUILD))
    ens = hier.full_bayes_sample(prior, res.alpha_star, cfg.kappa, model, bank, cfg.N, cfg.M,
                                 (derive(seed, _ALPHA), derive(seed, _LAMBDA)), cfg.thin,
                                 cfg.burn_frac, lambda_chain=chain)
    return CalibrationResult(method, ens, chain, res, info=info)
