"""Gaussian-process surrogates of ``lambda -> f_t(x, lambda)`` at fixed ``(t, x)``.

One independent GP per output and control point, with a stationary anisotropic
Matern 5/2 kernel, a constant prior mean equal to the target average, and
hyperparameters fitted by maximum marginal likelihood.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import GpFitError

log = logging.getLogger(__name__)

SQRT5 = np.sqrt(5.0)


def _matern_unit(r):
    """Unit-variance Matern 5/2 correlation at scaled distance ``r``."""
    return (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * np.exp(-SQRT5 * r)


def matern52(d, variance=1.0, lengthscale=1.0):
    """Matern 5/2 covariance ``s2 (1 + sqrt5 d/rho + 5 d^2 / 3 rho^2) exp(-sqrt5 d/rho)``.

    Examples
    --------
    >>> round(float(matern52(1.0)), 5)
    0.52399
    """
    d = np.asarray(d, dtype=float)
    if not (np.all(np.isfinite(d)) and np.isfinite(variance) and np.isfinite(lengthscale)):
        raise ValueError("matern52 needs finite inputs")
    if np.any(d < 0) or variance <= 0 or lengthscale <= 0:
        raise ValueError("need d >= 0, variance > 0 and lengthscale > 0")
    return variance * _matern_unit(d / lengthscale)


def scaled_distance(a, b, lengthscales):
    """Pairwise anisotropic distances between rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=float) / lengthscales
    b = np.asarray(b, dtype=float) / lengthscales
    sq = (a**2).sum(1)[:, None] + (b**2).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def _pairwise_sq_diffs(a, b):
    return (a[:, None, :] - b[None, :, :]) ** 2


@dataclass
class FitConfig:
    """Fitting options; ``nugget`` and ``max_nugget`` are relative to the target variance."""

    n_starts: int = 8
    lengthscale_bounds: tuple = (1e-2, 10.0)
    variance_lower: float = 1e-6
    variance_upper_factor: float = 100.0
    nugget: float = 1e-8
    max_nugget: float = 1e-4
    seed: int = 0


@dataclass
class GpSurrogate:
    """Fitted GP; the Cholesky factor is rebuilt from the stored parameters."""

    train_inputs: np.ndarray
    train_targets: np.ndarray
    variance: float
    lengthscales: np.ndarray
    nugget: float
    prior_mean: float
    chol: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.train_inputs = np.asarray(self.train_inputs, dtype=float)
        self.train_targets = np.asarray(self.train_targets, dtype=float)
        self.lengthscales = np.asarray(self.lengthscales, dtype=float)
        K = self.kernel(self.train_inputs, self.train_inputs)
        K[np.diag_indices_from(K)] += self.nugget
        self.chol = cholesky(K, lower=True)
        self.weights = cho_solve((self.chol, True), self.train_targets - self.prior_mean)

    @property
    def kernel_params(self):
        return self.variance, self.lengthscales.copy(), self.nugget

    def kernel(self, a, b):
        return self.variance * _matern_unit(scaled_distance(a, b, self.lengthscales))

    def predict(self, lam):
        """Posterior mean and variance at one point or a batch of points."""
        lam = np.asarray(lam, dtype=float)
        single = lam.ndim == 1
        lam = np.atleast_2d(lam)
        k = self.kernel(lam, self.train_inputs)
        mean = self.prior_mean + k @ self.weights
        v = solve_triangular(self.chol, k.T, lower=True, check_finite=False)
        var = np.maximum(self.variance - (v**2).sum(0), 0.0)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def to_dict(self) -> dict:
        return {
            "train_inputs": self.train_inputs.tolist(),
            "train_targets": self.train_targets.tolist(),
            "variance": float(self.variance),
            "lengthscales": self.lengthscales.tolist(),
            "nugget": float(self.nugget),
            "prior_mean": float(self.prior_mean),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpSurrogate":
        return cls(np.array(d["train_inputs"]), np.array(d["train_targets"]), d["variance"],
                   np.array(d["lengthscales"]), d["nugget"], d["prior_mean"])


def _neg_log_marginal(theta, sq_diffs, y, nugget):
    """Negative log marginal likelihood and its gradient in log-parameters.

    ``theta = (log s2, log rho_1, ..., log rho_q)``.
    """
    variance = np.exp(theta[0])
    inv_ls2 = np.exp(-2.0 * theta[1:])
    scaled = sq_diffs * inv_ls2
    r = np.sqrt(scaled.sum(-1))
    e = np.exp(-SQRT5 * r)
    R = (1.0 + SQRT5 * r + 5.0 / 3.0 * r**2) * e
    K = variance * R
    K[np.diag_indices_from(K)] += nugget
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = cho_solve((L, True), y, check_finite=False)
    n = len(y)
    nll = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * np.log(2 * np.pi)
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    inner = np.outer(alpha, alpha) - Kinv
    grad = np.empty_like(theta)
    grad[0] = -0.5 * np.sum(inner * (variance * R))
    # d k / d log rho_i = s2 (5/3) (1 + sqrt5 r) exp(-sqrt5 r) * (diff_i / rho_i)^2
    common = variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e
    for i in range(len(theta) - 1):
        grad[i + 1] = -0.5 * np.sum(inner * (common * scaled[..., i]))
    return nll, grad


def _factor_with_escalation(inputs, targets, variance, lengthscales, nugget, max_nugget):
    while True:
        try:
            return GpSurrogate(inputs, targets, variance, lengthscales, nugget, float(targets.mean()))
        except np.linalg.LinAlgError:
            if max(nugget * 10.0, 1e-12) > max_nugget * (1 + 1e-9):
                raise GpFitError(
                    f"kernel matrix not positive definite with nugget {nugget:.1e} "
                    f"(variance={variance:.3g}, lengthscales={np.round(lengthscales, 4)})")
            nugget = max(nugget * 10.0, 1e-12)
            log.debug("escalating nugget to %.1e", nugget)


def fit(train_inputs, train_targets, fit_config: FitConfig | None = None) -> GpSurrogate:
    """Fit kernel variance and lengthscales by multi-start bounded quasi-Newton.

    Raises
    ------
    GpFitError
        If the regularized kernel matrix cannot be factorized even at the
        largest allowed nugget.
    """
    cfg = fit_config or FitConfig()
    X = np.asarray(train_inputs, dtype=float)
    y_raw = np.asarray(train_targets, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two training points")
    if len(y_raw) != len(X):
        raise ValueError("inputs and targets differ in length")
    q = X.shape[1]
    y = y_raw - y_raw.mean()
    # nugget in units of the target variance, so the fit is scale invariant
    scale2 = float(np.var(y_raw)) or 1.0

    var_lo = cfg.variance_lower
    var_hi = max(var_lo, cfg.variance_upper_factor * float(np.var(y_raw)))
    ls_lo, ls_hi = cfg.lengthscale_bounds
    lo = np.r_[np.log(var_lo), np.full(q, np.log(ls_lo))]
    hi = np.r_[np.log(var_hi), np.full(q, np.log(ls_hi))]
    if var_hi == var_lo:
        best_theta = np.r_[np.log(var_lo), np.full(q, np.log(ls_hi))]
    else:
        sq = _pairwise_sq_diffs(X, X)
        nugget = cfg.nugget * scale2
        starts = qmc.scale(
            qmc.LatinHypercube(d=q + 1, seed=np.random.default_rng(cfg.seed)).random(cfg.n_starts),
            lo, hi)
        best_theta, best_val = None, np.inf
        for theta0 in starts:
            res = minimize(_neg_log_marginal, theta0, args=(sq, y, nugget), jac=True,
                           method="L-BFGS-B", bounds=list(zip(lo, hi)))
            if res.fun < best_val:
                best_theta, best_val = res.x, res.fun
        if best_val >= 1e24:
            # every start hit a singular matrix: fall back to the smoothest kernel
            best_theta = np.r_[np.log(var_lo), np.full(q, np.log(ls_hi))]
    return _factor_with_escalation(X, y_raw, float(np.exp(best_theta[0])),
                                   np.exp(best_theta[1:]), cfg.nugget * scale2, cfg.max_nugget * scale2)


class SurrogateStack:
    """Batched prediction for several surrogates sharing one training design.

    ``predict`` returns ``(mean, var)`` each of shape ``(m, S)`` for ``m`` query
    points and ``S`` surrogates. Falls back to a loop when the designs differ.
    """

    def __init__(self, surrogates):
        self.surrogates = list(surrogates)
        if not self.surrogates:
            raise ValueError("empty surrogate stack")
        X0 = self.surrogates[0].train_inputs
        self.shared = all(s.train_inputs.shape == X0.shape and np.array_equal(s.train_inputs, X0)
                          for s in self.surrogates)
        if self.shared:
            self.X = X0
            self.inv_ls2 = np.stack([1.0 / s.lengthscales**2 for s in self.surrogates], axis=1)
            self.variances = np.array([s.variance for s in self.surrogates])
            self.means = np.array([s.prior_mean for s in self.surrogates])
            self.weights = np.stack([s.weights for s in self.surrogates])
            n = len(X0)
            self.chol_inv = np.stack([
                solve_triangular(s.chol, np.eye(n), lower=True) for s in self.surrogates])

    @property
    def n_outputs(self) -> int:
        return len(self.surrogates)

    def subset(self, idx) -> "SurrogateStack":
        return SurrogateStack([self.surrogates[i] for i in idx])

    def predict(self, lams):
        lams = np.atleast_2d(np.asarray(lams, dtype=float))
        if not self.shared:
            out = [s.predict(lams) for s in self.surrogates]
            return np.stack([o[0] for o in out], 1), np.stack([o[1] for o in out], 1)
        sq = _pairwise_sq_diffs(lams, self.X)                # (m, n, q)
        r = np.sqrt(sq @ self.inv_ls2)                       # (m, n, S)
        k = np.ascontiguousarray((_matern_unit(r) * self.variances).transpose(2, 0, 1))  # (S, m, n)
        mean = self.means + (k @ self.weights[:, :, None])[..., 0].T
        v = k @ self.chol_inv.transpose(0, 2, 1)             # (S, m, n)
        var = np.maximum(self.variances - (v**2).sum(-1).T, 0.0)
        return mean, var


@dataclass
class SurrogateSet:
    """Surrogates keyed by ``(t, point_id)`` plus the control point of each id."""

    surrogates: dict
    points: dict

    def __getitem__(self, key) -> GpSurrogate:
        return self.surrogates[key]

    def stack(self, t: int, point_ids) -> SurrogateStack:
        return SurrogateStack([self.surrogates[(t, pid)] for pid in point_ids])

    def to_json(self) -> str:
        return json.dumps({
            "points": {str(k): list(map(float, v)) for k, v in self.points.items()},
            "surrogates": [{"t": t, "point": pid, **s.to_dict()}
                           for (t, pid), s in sorted(self.surrogates.items())],
        })

    @classmethod
    def from_json(cls, text: str) -> "SurrogateSet":
        d = json.loads(text)
        points = {int(k): np.array(v) for k, v in d["points"].items()}
        surr = {(e["t"], e["point"]): GpSurrogate.from_dict(e) for e in d["surrogates"]}
        return cls(surr, points)


def fit_surrogate_set(problem, points, n_train: int = 120, seed: int = 0,
                      fit_config: FitConfig | None = None, outputs=None) -> SurrogateSet:
    """Fit one GP per ``(t, x)`` on a shared LHS training design in ``[0, 1]^q``.

    ``points`` maps point ids to control vectors; ids ``0..n-1`` conventionally
    denote the observation design.
    """
    cfg = fit_config or FitConfig()
    rng = np.random.default_rng(seed)
    train = qmc.LatinHypercube(d=problem.q, seed=rng).random(n_train)
    outputs = outputs or range(1, problem.T + 1)
    surrogates = {}
    for pid, x in points.items():
        values = problem.evaluate(np.asarray(x)[None, :], train)
        for t in outputs:
            surrogates[(t, pid)] = fit(train, values[:, t - 1], cfg)
    return SurrogateSet(surrogates, {pid: np.asarray(x, dtype=float) for pid, x in points.items()})
