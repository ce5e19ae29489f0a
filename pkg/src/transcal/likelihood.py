"""Gaussian measurement model with surrogate variance folded into the noise."""

from __future__ import annotations

import logging
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class EvalCounter:
    """Counts model evaluations (one per output, point and parameter vector).

    Counts are attributed to the active stage, set with :meth:`stage`.
    """

    def __init__(self):
        self.counts = Counter()
        self.current = "other"

    @contextmanager
    def stage(self, name: str):
        prev, self.current = self.current, name
        try:
            yield self
        finally:
            self.current = prev

    def add(self, k: int):
        self.counts[self.current] += int(k)

    def as_dict(self) -> dict:
        return dict(self.counts)


class ExactPredictor:
    """Runs the simulator itself at fixed control points (variance identically 0).

    Same interface as :class:`transcal.gp.SurrogateStack`.
    """

    def __init__(self, problem, points, t: int):
        self.problem = problem
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.t = t

    @property
    def n_outputs(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "ExactPredictor":
        return ExactPredictor(self.problem, self.points[list(idx)], self.t)

    def predict(self, lams):
        lams = np.atleast_2d(np.asarray(lams, dtype=float))
        mean = self.problem.evaluate(self.points[None, :, :], lams[:, None, :])[..., self.t - 1]
        return mean, np.zeros_like(mean)


class ExactSource:
    """Builds :class:`ExactPredictor` objects keyed like a ``SurrogateSet``."""

    def __init__(self, problem, points: dict):
        self.problem = problem
        self.points = {k: np.asarray(v, dtype=float) for k, v in points.items()}

    def stack(self, t: int, point_ids):
        return ExactPredictor(self.problem, [self.points[p] for p in point_ids], t)


class CountingPredictor:
    """Wraps a predictor and reports every evaluation to an :class:`EvalCounter`."""

    def __init__(self, inner, counter: EvalCounter):
        self.inner = inner
        self.counter = counter

    @property
    def n_outputs(self):
        return self.inner.n_outputs

    def subset(self, idx):
        return CountingPredictor(self.inner.subset(idx), self.counter)

    def predict(self, lams):
        lams = np.atleast_2d(lams)
        self.counter.add(len(lams) * self.inner.n_outputs)
        return self.inner.predict(lams)


@dataclass
class MeasurementModel:
    """Observed values, noise level and a predictor of the observed output.

    ``predictor.predict(lams)`` must return ``(mean, var)`` of shape
    ``(m, n)`` for ``m`` parameter vectors and the ``n`` observation points.
    ``point_ids`` records which design points remain (after LOO removal).
    """

    y_obs: np.ndarray
    sigma_eps: float
    predictor: object
    point_ids: tuple = field(default=())

    def __post_init__(self):
        self.y_obs = np.asarray(self.y_obs, dtype=float)
        if not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")
        if self.predictor.n_outputs != len(self.y_obs):
            raise ValueError("need one predictor output per observation")
        if not self.point_ids:
            self.point_ids = tuple(range(len(self.y_obs)))

    @property
    def n(self) -> int:
        return len(self.y_obs)

    def log_likelihood_many(self, lams) -> np.ndarray:
        """Vectorized log-likelihood over rows of ``lams``."""
        mean, var = self.predictor.predict(lams)
        s2 = self.sigma_eps**2 + var
        ll = -0.5 * (LOG_2PI + np.log(s2) + (self.y_obs - mean) ** 2 / s2).sum(axis=1)
        bad = ~np.isfinite(ll)
        if np.any(bad):
            log.warning("non-finite surrogate output for %d parameter vectors", int(bad.sum()))
            ll[bad] = -np.inf
        return ll

    def log_likelihood(self, lam) -> float:
        return float(self.log_likelihood_many(np.asarray(lam, dtype=float)[None, :])[0])

    __call__ = log_likelihood_many


def log_likelihood(model: MeasurementModel, lam) -> float:
    """``sum_j log N(y_j; fhat(x_j, lam), sigma_eps^2 + v(x_j, lam))``."""
    return model.log_likelihood(lam)


def loo_model(model: MeasurementModel, j_hold: int) -> MeasurementModel:
    """Copy of ``model`` without observation ``j_hold`` (position, not point id)."""
    if model.n < 2:
        raise ValueError("leave-one-out needs at least two observations")
    if not 0 <= j_hold < model.n:
        raise IndexError(f"observation index {j_hold} out of range 0..{model.n - 1}")
    keep = [i for i in range(model.n) if i != j_hold]
    return MeasurementModel(model.y_obs[keep], model.sigma_eps, model.predictor.subset(keep),
                            tuple(model.point_ids[i] for i in keep))


def build_model(observations, source, counter: EvalCounter | None = None) -> MeasurementModel:
    """Measurement model for the observed output at every design point.

    ``source`` is a ``SurrogateSet`` or :class:`ExactSource` whose point ids
    ``0..n-1`` are the observation design.
    """
    ids = tuple(range(observations.n))
    pred = source.stack(observations.t_obs, ids)
    if counter is not None:
        pred = CountingPredictor(pred, counter)
    return MeasurementModel(observations.values, observations.sigma_eps, pred, ids)
