"""Entropic risk measure (ERM), entropic value-at-risk (EVaR), and β grids.

All evaluators work on finite distributions and use log-sum-exp shifting so
large risk levels do not overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

PROB_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Random variable with finitely many outcomes."""

    outcomes: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.outcomes, dtype=float))
        p = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if x.size == 0:
            raise ValueError("empty distribution")
        if x.shape != p.shape or x.ndim != 1:
            raise ValueError("outcomes and probs must be 1-d arrays of equal length")
        if not np.all(np.isfinite(x)):
            raise ValueError("outcomes must be finite")
        if np.any(p < 0) or np.any(p > 1) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError("probs must form a probability vector")
        x.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "outcomes", x)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_samples(cls, samples) -> "FiniteDistribution":
        """Empirical distribution putting mass ``1/n`` on each sample."""
        values, counts = np.unique(np.asarray(samples, dtype=float), return_counts=True)
        return cls(values, counts / counts.sum())

    @classmethod
    def constant(cls, c: float) -> "FiniteDistribution":
        return cls([c], [1.0])

    @property
    def support(self) -> np.ndarray:
        return self.outcomes[self.probs > 0]

    def mean(self) -> float:
        return float(np.dot(self.probs, self.outcomes))

    def ess_inf(self) -> float:
        return float(self.support.min())


def _erm(x: np.ndarray, p: np.ndarray, beta: float) -> float:
    keep = p > 0
    x, p = x[keep], p[keep]
    if beta == 0:
        return float(np.dot(p, x))
    val = -logsumexp(-beta * x, b=p) / beta
    return float(np.clip(val, x.min(), x.max()))


def erm(dist: FiniteDistribution, beta: float) -> float:
    """``-log E[exp(-beta X)] / beta``; the mean when ``beta == 0``."""
    if not (beta >= 0 and math.isfinite(beta)):
        raise ValueError(f"risk level must be finite and non-negative, got {beta}")
    return _erm(dist.outcomes, dist.probs, float(beta))


def erm_curve(dist: FiniteDistribution, betas) -> np.ndarray:
    """ERM evaluated at every positive ``beta`` in ``betas``."""
    betas = np.asarray(betas, dtype=float)
    keep = dist.probs > 0
    x, p = dist.outcomes[keep], dist.probs[keep]
    vals = -logsumexp(-np.multiply.outer(betas, x), b=p, axis=-1) / betas
    return np.clip(vals, x.min(), x.max())


def _evar_objective(dist, log_alpha, log_beta):
    beta = math.exp(log_beta)
    return _erm(dist.outcomes, dist.probs, beta) + log_alpha / beta


def evar(dist: FiniteDistribution, alpha: float, beta_cap: float = 1e4) -> float:
    """Entropic value-at-risk ``sup_beta ERM_beta[X] + log(alpha) / beta``.

    The objective is unimodal in ``beta``; the supremum over ``(0, beta_cap]``
    is bracketed by 64 log-spaced seeds and refined by golden-section search
    in ``log(beta)``. ``alpha = 0`` gives the essential infimum and
    ``alpha = 1`` the mean.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if beta_cap <= 0:
        raise ValueError("beta_cap must be positive")
    if alpha == 0.0:
        return dist.ess_inf()
    if alpha == 1.0:
        return dist.mean()
    la = math.log(alpha)
    lo, hi = math.log(beta_cap) - 12 * math.log(10), math.log(beta_cap)
    seeds = np.linspace(lo, hi, 64)
    vals = [_evar_objective(dist, la, t) for t in seeds]
    k = int(np.argmax(vals))
    a, b = seeds[max(k - 1, 0)], seeds[min(k + 1, len(seeds) - 1)]
    best = vals[k]
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = _evar_objective(dist, la, c), _evar_objective(dist, la, d)
    while b - a > 1e-12:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _evar_objective(dist, la, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _evar_objective(dist, la, d)
    best = max(best, fc, fd)
    return float(np.clip(best, dist.ess_inf(), dist.mean()))


class LossValue(NamedTuple):
    value: float
    derivative: float

    @property
    def overflow(self) -> bool:
        return not math.isfinite(self.value)


def erm_loss(z: float, beta: float) -> LossValue:
    """Elicitation loss ``(exp(-beta z) - 1) / beta + z`` and its derivative.

    On overflow the value saturates to ``+inf`` and ``overflow`` is set.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    t = -beta * z
    if t > 709.0:
        return LossValue(math.inf, -math.inf)
    em1 = math.expm1(t)
    return LossValue(max(em1 / beta + z, 0.0), -em1)


def erm_via_elicitation(dist: FiniteDistribution, beta: float, tol: float = 1e-10) -> float:
    """ERM as ``argmin_y E[loss(X - y)]``, found by bisection on the derivative.

    The derivative of the expected loss in ``y`` is ``E[exp(-beta (X - y))] - 1``,
    whose sign equals the sign of ``logsumexp(-beta X, b=p) + beta y``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    keep = dist.probs > 0
    x, p = dist.outcomes[keep], dist.probs[keep]
    lse = logsumexp(-beta * x, b=p)
    lo, hi = float(x.min()), float(x.max())
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if lse + beta * mid > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class BetaGrid:
    """Discretized risk levels for the EVaR reduction."""

    betas: np.ndarray
    alpha: float
    delta: float

    @property
    def K(self) -> int:
        return len(self.betas) - 1

    def __len__(self):
        return len(self.betas)


def k_bound(beta0: float, delta: float, alpha: float) -> float:
    """Upper bound ``log z / log(1 - z)`` on the grid size, ``z = beta0 delta / log(1/alpha)``."""
    z = beta0 * delta / math.log(1.0 / alpha)
    return math.log(z) / math.log1p(-z)


MAX_GRID = 10**7


def beta_grid(beta0: float, delta: float, alpha: float, max_size: int = MAX_GRID) -> BetaGrid:
    """Grid ``beta_{k+1} = beta_k L / (L - beta_k delta)`` with ``L = log(1/alpha)``.

    Grows until the first ``beta_K >= L / delta``. Raises ``ValueError`` when
    the size bound exceeds ``max_size``.
    """
    if not (0 < alpha < 1):
        raise ValueError("alpha must lie in (0, 1)")
    if not (beta0 > 0 and delta > 0):
        raise ValueError("beta0 and delta must be positive")
    L = math.log(1.0 / alpha)
    if beta0 * delta >= L:
        raise ValueError("initial β too large for precision")
    if k_bound(beta0, delta, alpha) > max_size:
        raise ValueError(f"β grid would exceed {max_size} points")
    stop = L / delta
    betas = [beta0]
    b = beta0
    while b < stop:
        denom = L - b * delta
        b = b * L / denom if denom > 0 else stop
        betas.append(b)
    return BetaGrid(np.array(betas), alpha, delta)


def hoeffding_beta0(delta: float, x_min: float, x_max: float) -> float:
    """Initial risk level ``8 delta / (x_max - x_min)**2``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not x_max > x_min:
        raise ValueError("x_max must exceed x_min")
    return 8.0 * delta / (x_max - x_min) ** 2
