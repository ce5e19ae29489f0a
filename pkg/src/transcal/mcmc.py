"""Delayed-rejection adaptive Metropolis (DRAM) on a bounded box.

Gaussian random-walk proposals whose covariance is re-estimated from the chain
history, with one delayed-rejection retry using a shrunken proposal after each
first-stage rejection. Proposals outside the box have zero target density.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import McmcError

log = logging.getLogger(__name__)


@dataclass
class McmcConfig:
    n_steps: int = 10_000
    burn_in: int | None = None       # default: 20% of n_steps
    thin: int = 1
    init: np.ndarray | None = None   # default: box centre
    init_cov: np.ndarray | None = None
    adapt_start: int = 1000
    adapt_interval: int = 100
    eps: float = 1e-10
    dr_scale: float = 0.2
    scale: float | None = None       # default: 2.38^2 / d
    seed: int | np.random.SeedSequence | None = None

    def resolved_burn_in(self) -> int:
        return int(0.2 * self.n_steps) if self.burn_in is None else int(self.burn_in)


@dataclass
class Chain:
    samples: np.ndarray
    log_densities: np.ndarray
    acceptance_rate: float
    config: McmcConfig = field(repr=False)
    stage1_accepts: int = 0
    stage2_accepts: int = 0
    out_of_box: int = 0
    final_cov: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.samples)

    def to_csv(self, path, names=None):
        names = names or [f"theta{i + 1}" for i in range(self.samples.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*names, "log_density"])
            for s, lp in zip(self.samples, self.log_densities):
                w.writerow([repr(float(v)) for v in (*s, lp)])


def _in_box(x, lo, hi):
    return bool(np.all(x >= lo) and np.all(x <= hi))


def _gauss_logkernel(diff, chol):
    """Log of an unnormalized N(0, C) density at ``diff``, with C = chol chol^T."""
    z = np.linalg.solve(chol, diff) if chol.ndim == 2 else diff / chol
    return -0.5 * float(z @ z)


def sample(log_density: Callable, box, config: McmcConfig | None = None) -> Chain:
    """Run one DRAM chain targeting ``exp(log_density)`` restricted to ``box``.

    Parameters
    ----------
    log_density : callable
        Maps a d-vector to a float (``-inf`` allowed).
    box : array_like, shape (d, 2)
        Lower and upper bounds per coordinate.
    config : McmcConfig

    Raises
    ------
    McmcError
        If the initial point has zero density or the chain rejects every
        proposal for ``10 * d * 1000`` consecutive steps.
    """
    cfg = config or McmcConfig()
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    d = len(lo)
    if np.any(hi < lo):
        raise ValueError("empty box")
    rng = np.random.default_rng(cfg.seed)
    x = np.asarray(cfg.init if cfg.init is not None else 0.5 * (lo + hi), dtype=float).copy()
    if not _in_box(x, lo, hi):
        raise McmcError(f"initial point {x} is outside the box")
    lp = float(log_density(x))
    if not np.isfinite(lp):
        raise McmcError(f"log density at the initial point {x} is {lp}")

    width = hi - lo
    cov = (np.asarray(cfg.init_cov, dtype=float) if cfg.init_cov is not None
           else np.diag((0.1 * np.where(width > 0, width, 1.0)) ** 2))
    chol = np.linalg.cholesky(cov)
    sd = cfg.scale if cfg.scale is not None else 2.38**2 / d
    dr = cfg.dr_scale
    chol2 = dr * chol

    burn = cfg.resolved_burn_in()
    n_keep = (cfg.n_steps - burn) // cfg.thin
    out = np.empty((n_keep, d))
    out_lp = np.empty(n_keep)
    # history moments for the Haario recursion
    mean = x.copy()
    m2 = np.zeros((d, d))
    count = 1

    z1 = rng.standard_normal((cfg.n_steps, d))
    z2 = rng.standard_normal((cfg.n_steps, d))
    logu = np.log(rng.random((cfg.n_steps, 2)))
    stuck = 0
    stuck_limit = 10 * d * 1000
    acc1 = acc2 = oob = 0
    kept = 0

    for i in range(cfg.n_steps):
        y1 = x + chol @ z1[i]
        inside1 = _in_box(y1, lo, hi)
        lp1 = float(log_density(y1)) if inside1 else -np.inf
        if not inside1:
            oob += 1
        a1 = min(0.0, lp1 - lp) if np.isfinite(lp1) else -np.inf
        moved = False
        if logu[i, 0] < a1:
            x, lp = y1, lp1
            acc1 += 1
            moved = True
        else:
            y2 = x + chol2 @ z2[i]
            if _in_box(y2, lo, hi):
                lp2 = float(log_density(y2))
                if np.isfinite(lp2):
                    # reverse first-stage acceptance from y2 towards y1
                    a1_rev = min(0.0, lp1 - lp2) if np.isfinite(lp1) else -np.inf
                    if a1_rev < 0.0:
                        num = lp2 + _gauss_logkernel(y1 - y2, chol) + np.log1p(-np.exp(a1_rev))
                        den = lp + _gauss_logkernel(y1 - x, chol) + np.log1p(-np.exp(a1))
                    else:
                        num = den = -np.inf
                    if np.isfinite(num) and logu[i, 1] < min(0.0, num - den):
                        x, lp = y2, lp2
                        acc2 += 1
                        moved = True
            else:
                oob += 1
        stuck = 0 if moved else stuck + 1
        if stuck >= stuck_limit:
            raise McmcError(f"no proposal accepted in {stuck} consecutive steps at x={x}, "
                            f"log density {lp}; proposal sd {np.sqrt(np.diag(chol @ chol.T))}")

        count += 1
        delta = x - mean
        mean = mean + delta / count
        m2 += np.outer(delta, x - mean)
        if i + 1 >= cfg.adapt_start and (i + 1) % cfg.adapt_interval == 0:
            new_cov = sd * (m2 / (count - 1) + cfg.eps * np.eye(d))
            try:
                chol = np.linalg.cholesky(new_cov)
                chol2 = dr * chol
            except np.linalg.LinAlgError:
                log.debug("skipping non-SPD covariance update at step %d", i + 1)

        if i >= burn and (i - burn) % cfg.thin == 0 and kept < n_keep:
            out[kept] = x
            out_lp[kept] = lp
            kept += 1

    rate = (acc1 + acc2) / cfg.n_steps
    return Chain(out, out_lp, rate, cfg, acc1, acc2, oob, chol @ chol.T)
