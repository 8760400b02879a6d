"""Model-free ERM and EVaR learning on transient MDPs.

One shared stream of transitions ``(s, a, s', r)`` updates a q table for
every β of a grid at once. The TD residual
``z = r + max_a' q(s', a', beta) - q(s, a, beta)`` drives the update
``q <- q - eta (exp(-beta z) - 1)``, which is a stochastic gradient step on
the ERM elicitation loss (by default with ``eta`` divided by β, see
:class:`StepSchedule`). A residual outside ``[z_min(beta), z_max(beta)]``
marks that β as diverged (unbounded ERM value); the other β continue.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import StationaryPolicy, TransientMdp
from .risk import beta_grid, hoeffding_beta0
from .trc import EvarSolution, ErmSolution

EXP_LIMIT = 700.0


@dataclass(frozen=True)
class StepSchedule:
    """Per-(s, a) step size ``eta0 / (1 + visits)**power``.

    Any ``0.5 < power <= 1`` gives ``sum eta = inf`` and ``sum eta**2 < inf``.
    With ``beta_scaled`` the step for risk level β is divided by β. The
    update direction ``exp(-beta z) - 1`` is about ``-beta z`` for small
    β, so without scaling the effective step shrinks with β and near risk
    neutral levels barely move; scaled, the update tends to the standard
    TD step ``eta z``. A constant factor per β keeps the Robbins-Monro
    conditions. :func:`z_bounds` scales its near risk-neutral pass even
    when the main schedule does not.
    """

    eta0: float = 0.5
    power: float = 0.6
    beta_scaled: bool = True

    def __post_init__(self):
        if not (0.5 < self.power <= 1.0):
            raise ValueError("power must lie in (0.5, 1] for the Robbins-Monro conditions")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")

    def __call__(self, visits):
        return self.eta0 / (1.0 + np.asarray(visits, dtype=float)) ** self.power

    def beta_factors(self, betas) -> np.ndarray:
        betas = np.asarray(betas, dtype=float)
        return 1.0 / betas if self.beta_scaled else np.ones_like(betas)


@dataclass(frozen=True)
class EpsilonGreedy:
    """Greedy in ``q`` (an (S, A) table) with probability ``1 - eps``, else uniform."""

    q: np.ndarray
    eps: float = 0.1


@dataclass(frozen=True, eq=False)
class Samples:
    """A finite prefix of a sample stream."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray
    episode_returns: np.ndarray
    mdp: TransientMdp

    def __len__(self):
        return len(self.s)

    def __iter__(self):
        return zip(self.s, self.a, self.s_next, self.r)


class SampleStream:
    """Transitions from episodes that start from μ and follow a behavior policy.

    Episodes end at the sink or after ``episode_cap`` steps. The stream is a
    deterministic function of ``seed``; :meth:`take` always returns the
    first ``n`` transitions.
    """

    def __init__(self, mdp: TransientMdp, behavior="uniform", seed: int = 0, episode_cap: int = 10**5):
        self.mdp = mdp
        self.behavior = behavior
        self.seed = int(seed)
        self.episode_cap = int(episode_cap)
        adm = mdp.admissible.astype(float)
        self._uniform_cum = np.cumsum(adm / adm.sum(axis=1, keepdims=True), axis=1)
        if isinstance(behavior, EpsilonGreedy):
            q = np.where(mdp.admissible, behavior.q, -np.inf)
            greedy = np.argmax(q, axis=1)
            probs = behavior.eps * adm / adm.sum(axis=1, keepdims=True)
            probs[np.arange(mdp.n_states), greedy] += 1.0 - behavior.eps
            self._action_cum = np.cumsum(probs, axis=1)
        elif behavior == "uniform":
            self._action_cum = self._uniform_cum
        else:
            raise ValueError(f"unknown behavior {behavior!r}")
        self._p_cum = np.cumsum(mdp.transitions, axis=2)
        self._mu_cum = np.cumsum(mdp.initial_dist)

    @staticmethod
    def _draw(cum, u):
        return min(int(np.searchsorted(cum, u * cum[-1], side="right")), len(cum) - 1)

    def __iter__(self):
        rng = np.random.default_rng(self.seed)
        mdp = self.mdp
        buf, k = rng.random(4096), 0
        s, steps = None, 0
        while True:
            if k + 3 > len(buf):
                buf, k = rng.random(4096), 0
            if s is None:
                s, steps = self._draw(self._mu_cum, buf[k]), 0
                k += 1
            a = self._draw(self._action_cum[s], buf[k])
            s2 = self._draw(self._p_cum[s, a], buf[k + 1])
            k += 2
            steps += 1
            yield s, a, s2, float(mdp.rewards[s, a, s2])
            s = None if (s2 == mdp.sink or steps >= self.episode_cap) else s2

    def take(self, n: int) -> Samples:
        s = np.empty(n, dtype=int)
        a = np.empty(n, dtype=int)
        s2 = np.empty(n, dtype=int)
        r = np.empty(n)
        returns = []
        total, steps = 0.0, 0
        for i, (si, ai, s2i, ri) in zip(range(n), self):
            s[i], a[i], s2[i], r[i] = si, ai, s2i, ri
            total += ri
            steps += 1
            if s2i == self.mdp.sink:
                returns.append(total)
                total, steps = 0.0, 0
            elif steps >= self.episode_cap:
                total, steps = 0.0, 0
        return Samples(s, a, s2, r, np.array(returns), self.mdp)


def sample_stream(mdp: TransientMdp, behavior="uniform", seed: int = 0, episode_cap: int = 10**5) -> SampleStream:
    return SampleStream(mdp, behavior, seed, episode_cap)


@dataclass(frozen=True)
class ZBounds:
    """Runtime bounds for the TD residual.

    ``z_max(beta) = ||r||_inf + 2 max(|c - beta d|, |c|)`` and
    ``z_min(beta) = -z_max(beta)``, where ``c`` is the largest near risk
    neutral q value and ``d = (x_max - x_min)**2 / 8`` comes from the range of
    observed episode returns.
    """

    c: float
    d: float
    x_min: float
    x_max: float
    r_inf: float

    def z_max(self, beta):
        beta = np.asarray(beta, dtype=float)
        return self.r_inf + 2.0 * np.maximum(np.abs(self.c - beta * self.d), abs(self.c))

    def z_min(self, beta):
        return -self.z_max(beta)


@dataclass(eq=False)
class QTable:
    """Learned ``q(s, a, beta)`` for every β of a grid."""

    q: np.ndarray
    betas: np.ndarray
    diverged: np.ndarray
    visit_counts: np.ndarray
    admissible: np.ndarray
    sink: int
    log: list = field(default_factory=list)

    def beta_index(self, beta: float) -> int:
        k = int(np.argmin(np.abs(self.betas - beta)))
        if not math.isclose(self.betas[k], beta, rel_tol=1e-12, abs_tol=0.0):
            raise KeyError(f"beta {beta} is not in the grid")
        return k

    def values(self) -> np.ndarray:
        """``max_a q(s, a, beta)`` as an (S, K) table (sink row 0)."""
        q = np.where(self.admissible[:, :, None], self.q, -np.inf)
        v = q.max(axis=1)
        v[self.sink] = 0.0
        return v

    def to_json(self) -> dict:
        return {
            "betas": [float(b) for b in self.betas],
            "diverged": [bool(x) for x in self.diverged],
            "visit_counts": self.visit_counts.tolist(),
            "q": [[[float(x) for x in row] for row in qs] for qs in self.q],
        }


def _next_values(q: np.ndarray, adm_lists, sink: int, s2: int) -> np.ndarray:
    if s2 == sink:
        return np.zeros(q.shape[2])
    return q[s2, adm_lists[s2]].max(axis=0)


def erm_qlearning(
    samples: Samples,
    betas,
    zb: ZBounds | None,
    schedule: StepSchedule | None = None,
    n_samples: int | None = None,
    reference: np.ndarray | None = None,
    log_every: int = 0,
) -> QTable:
    """Q-learning for the ERM total reward over a grid of risk levels.

    Parameters
    ----------
    samples : prefix of a :class:`SampleStream` (shared by all β)
    betas : BetaGrid or sequence of positive risk levels
    zb : residual bounds; ``None`` disables divergence detection
    reference : optional (S, A, K) table; with ``log_every`` the learning
        log records ``max |q - reference|`` per β every ``log_every`` samples
    """
    betas = np.asarray(getattr(betas, "betas", betas), dtype=float)
    mdp = samples.mdp
    schedule = schedule or StepSchedule()
    S, A, K = mdp.n_states, mdp.n_actions, len(betas)
    q = np.zeros((S, A, K))
    visits = np.zeros((S, A), dtype=np.int64)
    diverged = np.zeros(K, dtype=bool)
    adm_lists = [np.flatnonzero(mdp.admissible[s]) for s in range(S)]
    if zb is not None:
        zlo, zhi = zb.z_min(betas), zb.z_max(betas)
    factors = schedule.beta_factors(betas)
    log = []
    n = len(samples) if n_samples is None else min(n_samples, len(samples))
    for i in range(n):
        s, a, s2, r = samples.s[i], samples.a[i], samples.s_next[i], samples.r[i]
        z = r + _next_values(q, adm_lists, mdp.sink, s2) - q[s, a]
        t = -betas * z
        bad = t > EXP_LIMIT
        if zb is not None:
            bad |= (z < zlo) | (z > zhi)
        new_bad = bad & ~diverged
        if new_bad.any():
            for k in np.flatnonzero(new_bad):
                log.append((i, float(betas[k]), math.nan, True))
            diverged |= bad
        eta = schedule(visits[s, a])
        visits[s, a] += 1
        live = ~diverged
        q[s, a, live] -= eta * factors[live] * np.expm1(t[live])
        if reference is not None and log_every and (i + 1) % log_every == 0:
            gap = np.max(np.abs(np.where(mdp.admissible[:, :, None], q - reference, 0.0)), axis=(0, 1))
            log.extend((i + 1, float(b), float(g), bool(dv)) for b, g, dv in zip(betas, gap, diverged))
    q[mdp.sink] = 0.0
    q[:, :, diverged] = -np.inf
    return QTable(q, betas, diverged, visits, mdp.admissible.copy(), mdp.sink, log)


def z_bounds(
    stream, n_samples: int = 10**5, beta_c: float = 1e-10, schedule: StepSchedule | None = None
) -> ZBounds:
    """Estimate residual bounds from a near risk-neutral learning pass.

    ``c`` is the largest learned q value at ``beta_c``. This pass divides
    the step by ``beta_c`` (see :class:`StepSchedule`); unscaled, a step of
    order ``eta * beta_c * z`` would leave q at zero. The return range
    ``[x_min, x_max]`` is taken over completed episodes in the samples. A
    degenerate range is widened by ``||r||_inf`` (or by 1 when all rewards are
    zero) with a warning; ``d`` keeps the unwidened range.
    """
    samples = stream if isinstance(stream, Samples) else stream.take(n_samples)
    schedule = replace(schedule or StepSchedule(), beta_scaled=True)
    qt = erm_qlearning(samples, [beta_c], None, schedule)
    mdp = samples.mdp
    live = mdp.admissible.copy()
    live[mdp.sink] = False
    c = float(qt.q[:, :, 0][live].max())
    r_inf = float(np.max(np.abs(samples.r))) if len(samples) else 0.0
    rets = samples.episode_returns
    if len(rets):
        x_min, x_max = float(rets.min()), float(rets.max())
    else:
        x_min = x_max = 0.0
    d = (x_max - x_min) ** 2 / 8.0
    if x_max <= x_min:
        width = r_inf if r_inf > 0 else 1.0
        warnings.warn("degenerate return range; widening by the reward scale", RuntimeWarning)
        x_min, x_max = x_min - width, x_max + width
    return ZBounds(c, d, x_min, x_max, r_inf)


def greedy_policy(qt: QTable, beta: float) -> StationaryPolicy:
    """Greedy policy at grid level ``beta``; ties go to the lowest action."""
    k = qt.beta_index(beta)
    if qt.diverged[k]:
        raise ValueError(f"q values diverged at beta={beta}")
    q = np.where(qt.admissible, qt.q[:, :, k], -np.inf)
    return StationaryPolicy.deterministic(np.argmax(q, axis=1), q.shape[1])


def h_table(qt: QTable, mu: np.ndarray, alpha: float) -> np.ndarray:
    """``ERM_beta`` under μ of the learned state values plus ``log(alpha)/beta``."""
    v = qt.values()
    keep = mu > 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        x = -qt.betas[None, :] * v[keep]
        m = x.max(axis=0)
        lse = m + np.log(np.sum(mu[keep, None] * np.exp(x - m), axis=0))
        g = -lse / qt.betas
    h = g + math.log(alpha) / qt.betas
    h[qt.diverged | ~np.isfinite(h)] = -np.inf
    return h


def evar_qlearning(
    mdp: TransientMdp,
    alpha: float,
    delta: float,
    n_samples: int,
    seed: int = 0,
    schedule: StepSchedule | None = None,
    behavior="uniform",
    samples: Samples | None = None,
) -> tuple[EvarSolution, QTable, ZBounds]:
    """EVaR-TRC Q-learning.

    Estimates residual bounds, sets ``beta0 = 8 delta / (x_max - x_min)**2``,
    learns q over the resulting β grid from one sample stream, and picks the
    β maximizing ``h`` (ties: smallest β). Diverged β count as ``-inf``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if samples is None:
        samples = SampleStream(mdp, behavior, seed).take(n_samples)
    zb = z_bounds(samples, schedule=schedule)
    beta0 = hoeffding_beta0(delta, zb.x_min, zb.x_max)
    grid = beta_grid(beta0, delta, alpha)
    qt = erm_qlearning(samples, grid, zb, schedule)
    if qt.diverged.all():
        raise RuntimeError("all risk levels diverged")
    h = h_table(qt, mdp.initial_dist, alpha)
    k = int(np.argmax(h))
    policy = greedy_policy(qt, grid.betas[k])
    sol = EvarSolution(policy, float(grid.betas[k]), float(h[k]), grid.betas, h, delta, alpha)
    return sol, qt, zb


# ---------------------------------------------------------------------------
# Model-based helpers for checking learned tables


def q_from_erm_solution(mdp: TransientMdp, sol: ErmSolution) -> np.ndarray:
    """``q(s, a) = -log E[exp(-beta (r + v(s')))] / beta`` from a solved value function.

    Inadmissible pairs are ``-inf``; the sink row is 0.
    """
    beta = sol.beta
    v = np.where(np.arange(mdp.n_states) == mdp.sink, 0.0, sol.v)
    with np.errstate(over="ignore"):
        expo = np.where(mdp.transitions > 0, -beta * (mdp.rewards + v[None, None, :]), -np.inf)
    m = expo.max(axis=2, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        lse = m[..., 0] + np.log(np.sum(mdp.transitions * np.exp(expo - m), axis=2))
    q = np.where(mdp.admissible, -lse / beta, -np.inf)
    q[mdp.sink] = 0.0
    return q


def expected_update(mdp: TransientMdp, q: np.ndarray, beta: float, eta: float) -> np.ndarray:
    """One synchronous update with the sampled residual replaced by its expectation.

    ``q(s, a) <- q(s, a) - eta (E[exp(-beta z)] - 1)`` with
    ``z = r + max_a' q(s', a') - q(s, a)`` and ``s' ~ p(s, a, .)``.
    """
    qm = np.where(mdp.admissible, q, -np.inf)
    v = qm.max(axis=1)
    v[mdp.sink] = 0.0
    out = np.array(q, dtype=float)
    S = mdp.n_states
    for s in range(S):
        if s == mdp.sink:
            continue
        for a in np.flatnonzero(mdp.admissible[s]):
            nz = np.flatnonzero(mdp.transitions[s, a])
            z = mdp.rewards[s, a, nz] + v[nz] - q[s, a]
            out[s, a] = q[s, a] - eta * (np.dot(mdp.transitions[s, a, nz], np.exp(-beta * z)) - 1.0)
    out[mdp.sink] = 0.0
    return out


def write_learning_log(qt: QTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "beta", "q_gap", "diverged"])
        for i, beta, gap, div in qt.log:
            w.writerow([i, format(beta, ".17g"), "" if math.isnan(gap) else format(gap, ".17g"), int(div)])
