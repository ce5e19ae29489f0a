"""Synthetic three-output simulator and the virtual-measurement protocol.

The simulator is a cheap analytic stand-in for an impact code with control
variables ``x = (l0, r0, v0)`` and six parameters: four physical ones and two
numerical ones that carry model error. All inputs live in the unit cube.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

log = logging.getLogger(__name__)

S_DIM = 3
P_DIM = 4
Q_DIM = 6
N_OUTPUTS = 3

DEFAULT_LAMBDA0 = (0.4, 0.6, 0.5, 0.5, 0.3, 0.7)
DEFAULT_DELTA_V = 0.1


def taylor_like(x, lam):
    """Evaluate the three outputs at controls ``x`` and parameters ``lam``.

    Both arguments broadcast against each other; the last axis holds the
    coordinates. Returns an array of shape ``broadcast[:-1] + (3,)``.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    l0, r0, v0 = x[..., 0], x[..., 1], x[..., 2]
    l1, l2, l3, l4, l5, l6 = (lam[..., i] for i in range(Q_DIM))
    f1 = 0.2 * l0 + v0 * (1.0 + 0.5 * l1 + 0.3 * l2) + 0.15 * l5 - 0.1 * l6 * r0
    f2 = 0.8 * r0 + 0.6 * v0 * (0.5 + 0.4 * l3) + 0.1 * l1 * v0**2 - 0.12 * l5 + 0.08 * l6
    f3 = 0.5 + 0.7 * v0**2 * (0.6 + 0.4 * l4) + 0.1 * l0 * l2 - 0.1 * l5 - 0.05 * l6
    return np.stack(np.broadcast_arrays(f1, f2, f3), axis=-1)


@dataclass(frozen=True)
class CalibrationProblem:
    """Dimensions and simulator handle of a calibration task."""

    s: int
    p: int
    q: int
    T: int
    t_obs: int
    simulator: Callable = field(repr=False)

    def __post_init__(self):
        if not 1 <= self.t_obs <= self.T:
            raise ValueError(f"t_obs must lie in 1..{self.T}, got {self.t_obs}")
        if not self.p < self.q:
            raise ValueError("need at least one model-error parameter (p < q)")

    @property
    def control_bounds(self) -> np.ndarray:
        return np.tile([0.0, 1.0], (self.s, 1))

    @property
    def param_bounds(self) -> np.ndarray:
        return np.tile([0.0, 1.0], (self.q, 1))

    def evaluate(self, x, lam) -> np.ndarray:
        return self.simulator(x, lam)

    def with_t_obs(self, t_obs: int) -> "CalibrationProblem":
        return CalibrationProblem(self.s, self.p, self.q, self.T, t_obs, self.simulator)


def canonical_simulator(t_obs: int = 1) -> CalibrationProblem:
    return CalibrationProblem(S_DIM, P_DIM, Q_DIM, N_OUTPUTS, t_obs, taylor_like)


@dataclass(frozen=True)
class Design:
    points: np.ndarray
    seed: int | None

    def __len__(self):
        return len(self.points)


def lhs_design(n: int, s: int, seed=None) -> Design:
    """Plain stratified Latin hypercube on ``[0, 1]^s`` (no maximin search)."""
    if n < 1:
        raise ValueError("an LHS design needs at least one point")
    sampler = qmc.LatinHypercube(d=s, optimization=None, seed=np.random.default_rng(seed))
    return Design(points=sampler.random(n), seed=seed)


@dataclass(frozen=True)
class GroundTruthConfig:
    lambda0: tuple = DEFAULT_LAMBDA0
    delta_v: float = DEFAULT_DELTA_V


@dataclass(frozen=True)
class ObservationSet:
    """Noisy measurements of one output plus the noiseless truth of all outputs.

    ``truth`` is kept for scoring only; calibration code must not read it.
    """

    values: np.ndarray
    design: Design
    sigma_eps: float
    truth: np.ndarray
    t_obs: int
    seed: int | None = None
    delta_v: float = DEFAULT_DELTA_V
    lambda0: tuple = DEFAULT_LAMBDA0
    clamped: bool = False

    def __post_init__(self):
        if len(self.values) != len(self.design.points):
            raise ValueError("one measurement per design point is required")
        if not self.sigma_eps > 0:
            raise ValueError("sigma_eps must be positive")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def points(self) -> np.ndarray:
        return self.design.points


def shifted_controls(x, delta_v: float):
    """Apply the velocity shift; returns the shifted controls and a clamp flag."""
    omega = np.array(x, dtype=float, copy=True)
    omega[..., 2] = omega[..., 2] + delta_v
    clamped = bool(np.any((omega[..., 2] > 1.0) | (omega[..., 2] < 0.0)))
    omega[..., 2] = np.clip(omega[..., 2], 0.0, 1.0)
    return omega, clamped


def generate_observations(problem: CalibrationProblem, truth_cfg: GroundTruthConfig,
                          design: Design, sigma_eps: float, seed=None) -> ObservationSet:
    """Virtual measurements ``y_obs = f_t(omega(x), lambda0) + noise`` for ``t = t_obs``.

    The noise comes from its own generator seeded by ``seed`` so that the data
    do not depend on any sampler or surrogate seed.
    """
    if len(design.points) == 0:
        raise ValueError("design is empty")
    lambda0 = np.asarray(truth_cfg.lambda0, dtype=float)
    omega, clamped = shifted_controls(design.points, truth_cfg.delta_v)
    if clamped:
        log.info("velocity shift pushed some controls outside [0, 1]; clamped")
    truth = problem.evaluate(omega, lambda0[None, :])
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma_eps, size=len(design.points))
    values = truth[:, problem.t_obs - 1] + noise
    return ObservationSet(values=values, design=design, sigma_eps=float(sigma_eps),
                          truth=truth, t_obs=problem.t_obs, seed=seed,
                          delta_v=float(truth_cfg.delta_v),
                          lambda0=tuple(float(v) for v in lambda0), clamped=clamped)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_observations(obs: ObservationSet, csv_path) -> Path:
    """Write ``obs`` as CSV plus a JSON sidecar next to it; returns the sidecar path."""
    csv_path = Path(csv_path)
    s = obs.points.shape[1]
    T = obs.truth.shape[1]
    header = [f"x{i + 1}" for i in range(s)] + ["y_obs"] + [f"y_true_{t + 1}" for t in range(T)]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y, tr in zip(obs.points, obs.values, obs.truth):
            writer.writerow([_fmt(v) for v in (*x, y, *tr)])
    meta = {
        "seed": obs.seed,
        "design_seed": obs.design.seed,
        "sigma_eps": obs.sigma_eps,
        "delta_v": obs.delta_v,
        "lambda0": list(obs.lambda0),
        "t_obs": obs.t_obs,
        "clamped": obs.clamped,
    }
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar


def load_observations(csv_path) -> ObservationSet:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text())
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    s = sum(h.startswith("x") for h in header)
    points = rows[:, :s]
    values = rows[:, s]
    truth = rows[:, s + 1:]
    return ObservationSet(values=values, design=Design(points, meta.get("design_seed")),
                          sigma_eps=meta["sigma_eps"], truth=truth, t_obs=meta["t_obs"],
                          seed=meta.get("seed"), delta_v=meta["delta_v"],
                          lambda0=tuple(meta["lambda0"]), clamped=meta.get("clamped", False))
