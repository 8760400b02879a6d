"""ERM and EVaR solvers for the total reward criterion on transient MDPs.

The ERM objective is handled through the exponential value function
``w = -exp(-beta v)``, under which the Bellman operator of a decision rule
``d`` is affine: ``L^d w = B^d w - b^d``. Here ``B^d`` collects transitions
among non-sink states weighted by ``exp(-beta r)`` and ``b^d`` the
transitions into the sink.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .mdp import StationaryPolicy, TransientMdp, check_policy, spectral_radius
from .risk import beta_grid

EXP_LIMIT = 700.0
RHO_MARGIN = 1e-10
IMPROVE_RTOL = 1e-10


class RiskLevelError(ValueError):
    """The risk level makes ``exp(-beta r)`` leave the floating-point range."""


class UnboundedError(RuntimeError):
    """No risk level of the grid has a bounded ERM value."""


class IndeterminateError(RuntimeError):
    """Value iteration reached its iteration cap without a verdict."""


@dataclass(frozen=True, eq=False)
class ExpModel:
    """Exponential transition data over the non-sink states.

    ``B[a]`` is an ``(n, n)`` matrix and ``b[a]`` an ``n`` vector for every
    action; ``admissible`` is an ``(n, A)`` mask.
    """

    B: np.ndarray
    b: np.ndarray
    beta: float
    admissible: np.ndarray
    states: np.ndarray
    n_states: int
    sink: int
    sink_action: int

    def policy_from_actions(self, actions) -> StationaryPolicy:
        full = np.full(self.n_states, self.sink_action, dtype=int)
        full[self.states] = actions
        return StationaryPolicy.deterministic(full, self.B.shape[0])

    def decision(self, policy: StationaryPolicy):
        """``(B^d, b^d)`` for a (possibly randomized) stationary policy."""
        d = policy.probs[self.states]
        return np.einsum("sa,ast->st", d, self.B), np.einsum("sa,as->s", d, self.b)


@dataclass
class ErmSolution:
    """Optimal ERM-TRC solution. Vectors are indexed by all states; the sink has ``v = 0``."""

    w: np.ndarray
    v: np.ndarray
    policy: StationaryPolicy
    bounded: bool
    g_mu: float
    beta: float
    iterations: int = 0
    method: str = ""
    residual: float = float("nan")

    def to_json(self) -> dict:
        return {
            "policy": [int(a) for a in self.policy.actions],
            "value": [float(x) for x in self.v],
            "beta": float(self.beta),
            "bounded": bool(self.bounded),
            "objective": float(self.g_mu),
            "method": self.method,
        }


@dataclass
class EvarSolution:
    """EVaR-TRC solution selected over a β grid.

    ``h_values`` holds ``g*(beta) + log(alpha)/beta`` for every grid point;
    points skipped by the exact pruning rule are NaN.
    """

    policy: StationaryPolicy
    beta_star: float
    value: float
    betas: np.ndarray
    h_values: np.ndarray
    delta: float
    alpha: float
    erm: ErmSolution | None = None
    policies: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "policy": [int(a) for a in self.policy.actions],
            "beta_star": float(self.beta_star),
            "alpha": float(self.alpha),
            "delta": float(self.delta),
            "bounded": True,
            "objective": float(self.value),
            "grid_size": int(len(self.betas)),
        }
        if self.erm is not None:
            out["value"] = [float(x) for x in self.erm.v]
        return out


# ---------------------------------------------------------------------------
# Exponential model and operator


def _exp_weights(p: np.ndarray, r: np.ndarray, beta: float) -> np.ndarray:
    expo = np.where(p > 0, -beta * r, 0.0)
    if expo.size and (expo.max() > EXP_LIMIT or expo.min() < -EXP_LIMIT):
        raise RiskLevelError("risk level too large for reward scale")
    return np.where(p > 0, p * np.exp(expo), 0.0)


def exp_model(mdp: TransientMdp, beta: float) -> ExpModel:
    """Build ``B^a`` and ``b^a`` for every action at risk level ``beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    ns, e = mdp.nonsink, mdp.sink
    P = mdp.transitions[ns].transpose(1, 0, 2)  # (A, n, S)
    R = mdp.rewards[ns].transpose(1, 0, 2)
    W = _exp_weights(P, R, beta)
    return ExpModel(
        B=W[:, :, ns],
        b=W[:, :, e],
        beta=float(beta),
        admissible=mdp.admissible[ns],
        states=ns,
        n_states=mdp.n_states,
        sink=e,
        sink_action=int(np.flatnonzero(mdp.admissible[e])[0]),
    )


def _q_table(model: ExpModel, w: np.ndarray) -> np.ndarray:
    q = np.einsum("ast,t->sa", model.B, w) - model.b.T
    return np.where(model.admissible, q, -np.inf)


def exp_bellman(model: ExpModel, w) -> tuple[np.ndarray, StationaryPolicy]:
    """Apply ``max_a (B^a w - b^a)``; ties go to the lowest action index."""
    w = np.asarray(w, dtype=float)
    q = _q_table(model, w)
    act = np.argmax(q, axis=1)
    return q[np.arange(len(act)), act], model.policy_from_actions(act)


def _greedy(model: ExpModel, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    q = _q_table(model, w)
    act = np.argmax(q, axis=1)
    return q[np.arange(len(act)), act], act


def _evaluate(model: ExpModel, act: np.ndarray):
    """Exact exponential value of a deterministic rule, or None if unbounded."""
    idx = np.arange(len(act))
    Bd, bd = model.B[act, idx], model.b[act, idx]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if spectral_radius(Bd) >= 1.0 - RHO_MARGIN:
            return None
        try:
            w = -np.linalg.solve(np.eye(len(act)) - Bd, bd)
        except np.linalg.LinAlgError:
            return None
    return w if np.all(np.isfinite(w)) else None


def _improve(model: ExpModel, w: np.ndarray, act: np.ndarray) -> np.ndarray:
    """Switch only where another action beats the current one by a relative margin."""
    q = _q_table(model, w)
    cur = q[np.arange(len(act)), act]
    thresh = cur + IMPROVE_RTOL * np.abs(cur)
    better = q > thresh[:, None]
    new = act.copy()
    rows = np.flatnonzero(better.any(axis=1))
    new[rows] = np.argmax(q[rows], axis=1)
    return new


def _residual(model: ExpModel, w: np.ndarray) -> float:
    lw, _ = _greedy(model, w)
    return float(np.max(np.abs(lw - w))) if len(w) else 0.0


def _solution(mdp, model, w_ns, act, bounded, iterations, method) -> ErmSolution:
    S, beta = mdp.n_states, model.beta
    policy = model.policy_from_actions(act)
    if not bounded:
        w = np.full(S, -np.inf)
        w[mdp.sink] = -1.0
        v = np.full(S, -np.inf)
        v[mdp.sink] = 0.0
        return ErmSolution(w, v, policy, False, -math.inf, beta, iterations, method)
    w = np.full(S, -1.0)
    w[model.states] = w_ns
    with np.errstate(divide="ignore"):
        v = -np.log(-w) / beta + 0.0  # the sink gets +0.0 rather than -0.0
    mu = mdp.initial_dist[model.states]
    g = -math.log(float(np.dot(mu, -w_ns))) / beta if len(w_ns) else 0.0
    return ErmSolution(w, v, policy, True, g, beta, iterations, method, _residual(model, w_ns))


def _unbounded(mdp, model, act, iterations, method):
    return _solution(mdp, model, None, act, False, iterations, method)


# ---------------------------------------------------------------------------
# Solvers


def _policy_iteration_from(mdp, model, act, w, iterations, method, max_iter=10_000):
    for k in range(max_iter):
        new = _improve(model, w, act)
        if np.array_equal(new, act):
            return _solution(mdp, model, w, act, True, iterations + k, method)
        act = new
        w = _evaluate(model, act)
        if w is None:
            raise RuntimeError("policy improvement produced an unbounded policy")
    raise RuntimeError("policy iteration did not terminate")


def value_iteration(
    mdp: TransientMdp,
    beta: float,
    tol: float = 1e-9,
    max_iter: int = 10**6,
    w_floor: float = -1e12,
    check_every: int = 1000,
    polish: bool = True,
) -> ErmSolution:
    """Value iteration ``w <- L* w`` from ``w = 0``.

    The iterates decrease monotonically. The run is declared unbounded when a
    component falls below ``w_floor``, or when the greedy rule has
    ``rho(B^d) >= 1 - 1e-10`` at two consecutive stability checks and no
    bounded starting rule exists.

    A small step is only accepted once the greedy rule evaluates to a finite
    value. Rules that terminate with tiny probability per step keep ``w``
    near zero for astronomically many sweeps, so when the greedy rule is not
    bounded the iteration restarts from the exact value of a bounded rule
    (a lower bound on the optimum) and climbs to the fixed point from below.
    On convergence the greedy rule is evaluated exactly (``polish``) and
    improved until it is a fixed point.
    """
    model = exp_model(mdp, beta)
    n = len(model.states)
    w = np.zeros(n)
    act = np.zeros(n, dtype=int)
    last_flagged = None
    stalled = False
    it = 0
    diff = 0.0
    for it in range(1, max_iter + 1):
        w_new, act = _greedy(model, w)
        diff = float(np.max(np.abs(w_new - w))) if n else 0.0
        w = w_new
        if diff <= tol:
            break
        if w.min() < w_floor:
            return _unbounded(mdp, model, act, it, "vi")
        if it % check_every == 0:
            if spectral_radius(model.B[act, np.arange(n)]) >= 1.0 - RHO_MARGIN:
                if last_flagged is not None and np.array_equal(last_flagged, act):
                    stalled = True
                    break
                last_flagged = act.copy()
            else:
                last_flagged = None
    else:
        raise IndeterminateError(f"value iteration indeterminate after {max_iter} sweeps (residual {diff:g})")
    w_exact = _evaluate(model, act) if not stalled else None
    if w_exact is None:
        start = _proper_start(mdp, model, w)
        if start is None:
            return _unbounded(mdp, model, act, it, "vi")
        act, w = start
        for k in range(1, max_iter + 1):
            w_new, act = _greedy(model, w)
            diff = float(np.max(np.abs(w_new - w)))
            w = w_new
            if diff <= tol:
                break
        else:
            raise IndeterminateError(f"value iteration indeterminate after {max_iter} sweeps (residual {diff:g})")
        it += k
        w_exact = _evaluate(model, act)
        if w_exact is None:
            raise IndeterminateError("value iteration from below ended on an unbounded rule")
    if not polish:
        return _solution(mdp, model, w, act, True, it, "vi")
    return _policy_iteration_from(mdp, model, act, w_exact, it, "vi")


def policy_iteration(
    mdp: TransientMdp, beta: float, pi0: StationaryPolicy | None = None, warm_sweeps: int = 100
) -> ErmSolution:
    """Policy iteration with exact evaluation ``w = -(I - B^d)^{-1} b^d``.

    Without ``pi0`` the initial rule is greedy after ``warm_sweeps`` value
    iteration sweeps, or the risk-neutral optimal rule when that greedy rule
    is unbounded. If neither is bounded, value iteration decides.
    """
    model = exp_model(mdp, beta)
    if pi0 is not None:
        check_policy(mdp, pi0)
        if not pi0.is_deterministic:
            raise ValueError("initial policy must be deterministic")
        act = pi0.actions[model.states]
        w = _evaluate(model, act)
        if w is None:
            raise ValueError("initial policy has unbounded exponential return")
        return _policy_iteration_from(mdp, model, act, w, 0, "pi")
    w = np.zeros(len(model.states))
    for _ in range(warm_sweeps):
        w, act = _greedy(model, w)
    start = _proper_start(mdp, model, w)
    if start is None:
        sol = value_iteration(mdp, beta)
        sol.method = "pi"
        return sol
    act, w_act = start
    return _policy_iteration_from(mdp, model, act, w_act, 0, "pi")


def _proper_start(mdp, model, w, max_sweeps: int = 100_000, u_cap: float = 1e15):
    """A deterministic rule with bounded exponential value, and that value.

    Tries the greedy rule for ``w``, the risk-neutral optimal rule, and then
    searches for a rule with ``rho(B^d) < 1`` directly: the iteration
    ``u <- 1 + min_a B^a u`` from ``u = 1`` stays bounded exactly when such
    a rule exists, and its minimizing rule eventually satisfies
    ``B^d u < u``. Returns None when ``u`` exceeds ``u_cap`` or the sweep
    budget runs out, taken as evidence that no rule is bounded.
    """
    n = len(model.states)
    if n == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    _, greedy = _greedy(model, w)
    neutral = risk_neutral_solve(mdp).policy.actions[model.states]
    for act in (greedy, neutral):
        w_act = _evaluate(model, act)
        if w_act is not None:
            return act, w_act
    idx = np.arange(n)
    u = np.ones(n)
    for _ in range(max_sweeps):
        bu = np.where(model.admissible, np.einsum("ast,t->sa", model.B, u), np.inf)
        act = np.argmin(bu, axis=1)
        # Collatz-Wielandt: rho(B^d) <= max_s (B^d u)_s / u_s.
        if np.max(bu[idx, act] / u) < 1.0 - RHO_MARGIN:
            w_act = _evaluate(model, act)
            if w_act is not None:
                return act, w_act
        u = 1.0 + bu[idx, act]
        if not u.max() <= u_cap:
            return None
    return None


def lp_solve(mdp: TransientMdp, beta: float) -> ErmSolution:
    """Linear program ``min 1'w`` subject to ``w >= B^a w - b^a`` for all admissible ``a``.

    Variables are rescaled per state by the magnitude of a short value
    iteration run so the LP is well conditioned when ``|w|`` spans many
    orders of magnitude. The greedy rule of the LP solution is evaluated
    exactly and, if needed, improved until it is a fixed point.
    """
    model = exp_model(mdp, beta)
    n = len(model.states)
    if n == 0:
        return _solution(mdp, model, np.zeros(0), np.zeros(0, dtype=int), True, 0, "lp")
    w = np.zeros(n)
    for _ in range(200):
        w, _ = _greedy(model, w)
    scale = np.where(np.abs(w) > 0, np.abs(w), 1.0)
    s_idx, a_idx = np.nonzero(model.admissible)
    A_ub = model.B[a_idx, s_idx, :] * scale[None, :]
    A_ub[np.arange(len(s_idx)), s_idx] -= scale[s_idx]
    b_ub = model.b[a_idx, s_idx]
    rownorm = np.maximum(np.abs(A_ub).max(axis=1), np.abs(b_ub))
    rownorm[rownorm == 0] = 1.0
    res = linprog(
        np.ones(n),
        A_ub=A_ub / rownorm[:, None],
        b_ub=b_ub / rownorm,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status in (2, 3):
        return _unbounded(mdp, model, np.zeros(n, dtype=int), 0, "lp")
    if res.status != 0:
        # Numerical failure; an LP without any bounded rule is infeasible.
        if _proper_start(mdp, model, w) is None:
            return _unbounded(mdp, model, np.zeros(n, dtype=int), 0, "lp")
        raise RuntimeError(f"LP solver failed: {res.message}")
    w_lp = res.x * scale
    _, act = _greedy(model, w_lp)
    w_exact = _evaluate(model, act)
    if w_exact is None:
        return _unbounded(mdp, model, act, int(res.nit), "lp")
    return _policy_iteration_from(mdp, model, act, w_exact, int(res.nit), "lp")


SOLVERS = {"vi": value_iteration, "pi": policy_iteration, "lp": lp_solve}


def solve_erm(mdp: TransientMdp, beta: float, method: str = "pi") -> ErmSolution:
    try:
        solver = SOLVERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None
    return solver(mdp, beta)


# ---------------------------------------------------------------------------
# Risk-neutral solve and policy evaluation


@dataclass
class RiskNeutralSolution:
    v: np.ndarray
    policy: StationaryPolicy
    g_mu: float


def _expected_rewards(mdp: TransientMdp) -> np.ndarray:
    return np.einsum("sat,sat->sa", mdp.transitions, mdp.rewards)


def risk_neutral_solve(mdp: TransientMdp, max_iter: int = 10_000) -> RiskNeutralSolution:
    """Expected total reward optimum by policy iteration."""
    ns = mdp.nonsink
    n = len(ns)
    P = mdp.transitions[np.ix_(ns, np.arange(mdp.n_actions), ns)]
    rbar = _expected_rewards(mdp)[ns]
    adm = mdp.admissible[ns]
    act = np.argmax(adm, axis=1)
    idx = np.arange(n)
    sink_action = int(np.flatnonzero(mdp.admissible[mdp.sink])[0])
    for _ in range(max_iter):
        v = np.linalg.solve(np.eye(n) - P[idx, act], rbar[idx, act])
        q = np.where(adm, rbar + np.einsum("sat,t->sa", P, v), -np.inf)
        cur = q[idx, act]
        better = q > (cur + 1e-12 * np.maximum(1.0, np.abs(cur)))[:, None]
        rows = np.flatnonzero(better.any(axis=1))
        if rows.size == 0:
            break
        act = act.copy()
        act[rows] = np.argmax(q[rows], axis=1)
    full_v = np.zeros(mdp.n_states)
    full_v[ns] = v
    full_a = np.full(mdp.n_states, sink_action)
    full_a[ns] = act
    pol = StationaryPolicy.deterministic(full_a, mdp.n_actions)
    return RiskNeutralSolution(full_v, pol, float(np.dot(mdp.initial_dist, full_v)))


def policy_value(mdp: TransientMdp, policy: StationaryPolicy) -> np.ndarray:
    """Risk-neutral expected total reward of a stationary policy, per state."""
    check_policy(mdp, policy)
    ns = mdp.nonsink
    full = np.einsum("sa,sat->st", policy.probs, mdp.transitions)
    r = np.einsum("sa,sa->s", policy.probs, _expected_rewards(mdp))
    v = np.zeros(mdp.n_states)
    v[ns] = np.linalg.solve(np.eye(len(ns)) - full[np.ix_(ns, ns)], r[ns])
    return v


def erm_return(mdp: TransientMdp, policy: StationaryPolicy, beta: float) -> float:
    """``ERM_beta`` of the total reward of ``policy`` started from μ.

    Returns ``-inf`` when ``rho(B^pi) >= 1``; ``beta = 0`` gives the expected
    total reward.
    """
    check_policy(mdp, policy)
    if beta == 0:
        return float(np.dot(mdp.initial_dist, policy_value(mdp, policy)))
    model = exp_model(mdp, beta)
    Bd, bd = model.decision(policy)
    if spectral_radius(Bd) >= 1.0 - RHO_MARGIN:
        return -math.inf
    try:
        w = -np.linalg.solve(np.eye(len(bd)) - Bd, bd)
    except np.linalg.LinAlgError:
        return -math.inf
    mu = mdp.initial_dist[model.states]
    return -math.log(float(np.dot(mu, -w))) / beta


def h_value(g: float, beta: float, alpha: float) -> float:
    """``g + log(alpha) / beta``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if g == -math.inf:
        return -math.inf
    return g + math.log(alpha) / beta


# ---------------------------------------------------------------------------
# EVaR over a β grid


class _Continuation:
    """Evaluate a fixed deterministic rule over many β at once and detect
    the first β where it stops being ERM-optimal."""

    def __init__(self, mdp: TransientMdp):
        ns = mdp.nonsink
        self.mdp = mdp
        self.ns = ns
        self.P = mdp.transitions[ns].transpose(1, 0, 2)  # (A, n, S)
        self.R = mdp.rewards[ns].transpose(1, 0, 2)
        self.adm = mdp.admissible[ns]
        self.mu = mdp.initial_dist[ns]
        self.e = mdp.sink

    def scan(self, act: np.ndarray, betas: np.ndarray):
        """Returns ``(g, ok)``; ``ok[j]`` is True while ``act`` is optimal at ``betas[j]``."""
        n, k = len(self.ns), len(betas)
        expo = -betas[:, None, None, None] * self.R[None]
        if np.any(np.abs(np.where(self.P[None] > 0, expo, 0.0)) > EXP_LIMIT):
            raise RiskLevelError("risk level too large for reward scale")
        W = np.where(self.P[None] > 0, self.P[None] * np.exp(np.where(self.P[None] > 0, expo, 0.0)), 0.0)
        B, b = W[..., self.ns], W[..., self.e]  # (k, A, n, n), (k, A, n)
        idx = np.arange(n)
        Bd, bd = B[:, act, idx], b[:, act, idx]
        M = np.eye(n)[None] - Bd
        try:
            inv = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            return np.full(k, -np.inf), np.zeros(k, dtype=bool)
        w = -np.einsum("kst,kt->ks", inv, bd)
        scale = np.max(np.abs(inv), axis=(1, 2))
        valid = np.all(inv >= -1e-9 * scale[:, None, None], axis=(1, 2)) & np.all(np.isfinite(w), axis=1)
        q = np.einsum("kast,kt->ksa", B, w) - b.transpose(0, 2, 1)
        q = np.where(self.adm[None], q, -np.inf)
        cur = q[:, idx, act]
        ok = valid & np.all(q <= (cur + IMPROVE_RTOL * np.abs(cur))[:, :, None], axis=(1, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            g = -np.log(np.einsum("s,ks->k", self.mu, -w)) / betas
        return g, ok


def _optimal_erm(mdp, beta, act=None, method: str = "pi") -> ErmSolution:
    """ERM optimum at ``beta``, warm-started from ``act`` when possible."""
    if act is not None:
        model = exp_model(mdp, beta)
        w = _evaluate(model, act)
        if w is not None:
            return _policy_iteration_from(mdp, model, act, w, 0, method)
    return solve_erm(mdp, beta, method)


def halving_beta0(mdp: TransientMdp, delta: float, alpha: float, start: float = 1.0, g0: float | None = None) -> float:
    """Halve ``beta0`` until ``g*(0) - g*(beta0) <= delta`` and ``beta0 delta < log(1/alpha)``."""
    if g0 is None:
        g0 = risk_neutral_solve(mdp).g_mu
    L = math.log(1.0 / alpha)
    beta0 = start
    while beta0 * delta >= L:
        beta0 /= 2
    for _ in range(200):
        try:
            g = _optimal_erm(mdp, beta0).g_mu
        except RiskLevelError:
            g = -math.inf
        if g0 - g <= delta:
            return beta0
        beta0 /= 2
    raise RuntimeError("could not find an initial risk level")


def evar_solve(
    mdp: TransientMdp,
    alpha: float,
    delta: float,
    beta0: float | None = None,
    betas=None,
    prune: bool = True,
    chunk: int = 256,
    method: str = "pi",
) -> EvarSolution:
    """δ-optimal EVaR-TRC policy by maximizing ``h(beta) = g*(beta) + log(alpha)/beta``
    over a β grid.

    ``beta0`` defaults to the halving rule of :func:`halving_beta0`; an
    explicit grid may be passed as ``betas``. Grid points are visited in
    increasing order. The current optimal rule is evaluated in batches over
    many β and re-optimized only where it stops being optimal: by policy
    iteration from the previous rule when that rule is still bounded, and
    otherwise by the solver named in ``method``. With ``prune`` the scan stops once ``g*(beta)`` falls to the
    best ``h`` found: ``g*`` is non-increasing and ``h <= g*``, so no later
    grid point can win. Ties go to the smallest β.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if betas is None:
        if beta0 is None:
            beta0 = halving_beta0(mdp, delta, alpha)
        betas = beta_grid(beta0, delta, alpha).betas
    betas = np.asarray(betas, dtype=float)
    log_alpha = math.log(alpha)
    h = np.full(len(betas), np.nan)
    cont = _Continuation(mdp)
    best_h, best_j, best_act = -math.inf, -1, None
    act = None
    j = 0
    stop = False
    while j < len(betas) and not stop:
        try:
            sol = _optimal_erm(mdp, betas[j], act, method)
        except RiskLevelError:
            warnings.warn(f"grid scan stopped at beta={betas[j]:g}: reward scale overflow", RuntimeWarning)
            break
        if not sol.bounded:
            h[j:] = -np.inf
            break
        act = sol.policy.actions[cont.ns]
        hj = sol.g_mu + log_alpha / betas[j]
        h[j] = hj
        if hj > best_h:
            best_h, best_j, best_act = hj, j, act
        if prune and sol.g_mu <= best_h:
            break
        j += 1
        # Batch-evaluate the current rule on following grid points.
        while j < len(betas):
            sl = betas[j : j + chunk]
            try:
                g, ok = cont.scan(act, sl)
            except RiskLevelError:
                break
            n_ok = int(np.argmin(ok)) if not ok.all() else len(sl)
            for i in range(n_ok):
                hj = g[i] + log_alpha / sl[i]
                h[j + i] = hj
                if hj > best_h:
                    best_h, best_j, best_act = hj, j + i, act
                if prune and g[i] <= best_h:
                    stop = True
                    break
            if stop:
                break
            j += n_ok
            if n_ok < len(sl):
                break
    if best_j < 0:
        raise UnboundedError("no bounded ERM level found")
    erm_sol = _optimal_erm(mdp, betas[best_j], best_act, method)
    full = erm_sol.policy.actions.copy()
    full[cont.ns] = best_act
    policy = StationaryPolicy.deterministic(full, mdp.n_actions)
    return EvarSolution(policy, float(betas[best_j]), float(best_h), betas, h, delta, alpha, erm_sol)
