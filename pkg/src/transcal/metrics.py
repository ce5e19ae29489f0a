"""Leave-one-out scoring: relative error and smallest-interval probability."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import NumericalError
from .hier import PosteriorEnsemble, posterior_expectation
from .likelihood import CountingPredictor, ExactSource, build_model, loo_model
from .methods import METHODS, MethodConfig, calibrate
from .seeding import derive

log = logging.getLogger(__name__)


def rmsre(predictions, truths) -> float:
    """Root mean squared relative error.

    >>> round(rmsre([1.1, 0.9], [1.0, 1.0]), 12)
    0.1
    """
    pred = np.asarray(predictions, dtype=float)
    truth = np.asarray(truths, dtype=float)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("predictions and truths must be non-empty and of equal shape")
    if np.any(truth == 0):
        raise ValueError("relative error undefined for a zero true value")
    return float(np.sqrt(np.mean(((pred - truth) / truth) ** 2)))


def interval_mass(f, v, a: float, b: float):
    """Mass of ``N(f, v)`` in ``[a, b]`` per sample; a point mass where ``v == 0``."""
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    sd = np.sqrt(np.where(v > 0, v, 1.0))
    smooth = ndtr((b - f) / sd) - ndtr((a - f) / sd)
    point = ((f >= a) & (f <= b)).astype(float)
    return np.where(v > 0, smooth, point)


def interval_probability_from(ensemble: PosteriorEnsemble, f, v, true_value: float,
                              mean: float) -> float:
    eta = abs(float(true_value) - float(mean))
    if eta == 0:
        return 0.0
    h = interval_mass(f, v, mean - eta, mean + eta)
    return float(np.clip(posterior_expectation(ensemble, h), 0.0, 1.0))


def interval_probability(ensemble: PosteriorEnsemble, surrogate, true_value: float,
                         mean: float | None = None) -> float:
    """Posterior mass of the smallest interval centred on the predictive mean that holds ``true_value``.

    ``surrogate.predict`` must return per-sample ``(mean, variance)`` for one
    output, as ``(M,)`` or ``(M, 1)`` arrays.
    """
    f, v = surrogate.predict(ensemble.lambda_samples)
    f, v = np.asarray(f, dtype=float).reshape(ensemble.M), np.asarray(v, dtype=float).reshape(ensemble.M)
    if mean is None:
        mean = posterior_expectation(ensemble, f)
    return interval_probability_from(ensemble, f, v, true_value, mean)


def quantile_09(values) -> float:
    """0.9 empirical quantile, linear interpolation at rank ``1 + 0.9 (n - 1)``.

    >>> quantile_09(range(1, 11))
    9.1
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("quantile of an empty sample")
    return float(np.quantile(values, 0.9, method="linear"))


@dataclass
class PointRecord:
    j: int
    t: int
    mean: float
    std: float
    truth: float
    p_hat: float


@dataclass
class LooReport:
    method: str
    t_obs: int
    records: list = field(default_factory=list)
    failed_folds: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    n_outputs: int = 3

    @property
    def complete(self) -> bool:
        return not self.failed_folds

    def _by_t(self, t):
        return [r for r in self.records if r.t == t and np.isfinite(r.mean)]

    @property
    def rmsre(self) -> dict:
        out = {}
        for t in range(1, self.n_outputs + 1):
            rs = self._by_t(t)
            out[t] = rmsre([r.mean for r in rs], [r.truth for r in rs]) if rs else float("nan")
        return out

    @property
    def p_quantile(self) -> dict:
        out = {}
        for t in range(1, self.n_outputs + 1):
            rs = self._by_t(t)
            out[t] = quantile_09([r.p_hat for r in rs]) if rs else float("nan")
        return out

    def mean_rmsre(self) -> float:
        return float(np.mean(list(self.rmsre.values())))

    def summary(self) -> dict:
        return {
            "method": self.method,
            "t_obs": self.t_obs,
            "rmsre": {str(t): v for t, v in self.rmsre.items()},
            "rmsre_percent": {str(t): 100.0 * v for t, v in self.rmsre.items()},
            "p09": {str(t): v for t, v in self.p_quantile.items()},
            "complete": self.complete,
            "failed_folds": {str(k): v for k, v in self.failed_folds.items()},
            "counters": self.counters,
        }

    def write_csv(self, path, append: bool = False):
        mode = "a" if append else "w"
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["method", "t_obs", "j", "t", "mean", "std", "truth", "p_hat"])
            for r in self.records:
                w.writerow([self.method, self.t_obs, r.j, r.t, *(f"{v:.17g}" for v in
                                                                 (r.mean, r.std, r.truth, r.p_hat))])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def loo_evaluate_many(problem, observations, methods, config: MethodConfig | None = None,
                      seed=None, source=None, counter=None) -> dict:
    """Leave-one-out study of several methods on one data set.

    Every fold ``j`` refits each method on the other ``n - 1`` observations
    and predicts all outputs at ``x_j``. Folds use seeds derived from
    ``(seed, j)``, so the hierarchical methods share their MAP stage and
    parameter chain within a fold.
    """
    config = config or MethodConfig()
    for m in methods:
        config.validate(m)
    if observations.n < 2:
        raise ValueError("leave-one-out needs at least two observations")
    if source is None:
        source = ExactSource(problem, dict(enumerate(observations.points)))
    full = build_model(observations, source, counter)
    reports = {m: LooReport(m, observations.t_obs, n_outputs=problem.T) for m in methods}
    for j in range(observations.n):
        fold = loo_model(full, j)
        cache: dict = {}
        for m in methods:
            try:
                res = calibrate(m, problem, fold, config, derive(seed, j), counter, cache)
            except NumericalError as exc:
                log.warning("fold %d of %s failed: %s", j, m, exc)
                reports[m].failed_folds[j] = f"{type(exc).__name__}: {exc}"
                for t in range(1, problem.T + 1):
                    reports[m].records.append(PointRecord(j, t, np.nan, np.nan,
                                                          float(observations.truth[j, t - 1]), np.nan))
                continue
            ens = res.ensemble
            for t in range(1, problem.T + 1):
                pred = source.stack(t, (j,))
                if counter is not None:
                    pred = CountingPredictor(pred, counter)
                    with counter.stage("predict"):
                        f, v = pred.predict(ens.lambda_samples)
                else:
                    f, v = pred.predict(ens.lambda_samples)
                f, v = f[:, 0], v[:, 0]
                mean = posterior_expectation(ens, f)
                var = max(posterior_expectation(ens, f**2 + v) - mean**2, 0.0)
                truth = float(observations.truth[j, t - 1])
                p_hat = interval_probability_from(ens, f, v, truth, mean)
                reports[m].records.append(PointRecord(j, t, mean, float(np.sqrt(var)), truth, p_hat))
    if counter is not None:
        for r in reports.values():
            r.counters = counter.as_dict()
    return reports


def loo_evaluate(problem, observations, method: str, config: MethodConfig | None = None,
                 seed=None, source=None, counter=None) -> LooReport:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return loo_evaluate_many(problem, observations, [method], config, seed, source, counter)[method]
