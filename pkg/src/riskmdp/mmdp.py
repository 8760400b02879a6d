"""Finite-horizon multi-model MDPs (MMDPs) and their policy solvers.

An MMDP is a weighted set of MDP models sharing states and actions. The
objective of a Markov policy is the λ-weighted mean of its expected return
in each model. Besides the mean-value problem (MVP) and weight-select-update
(WSU) baselines, the module implements coordinate ascent dynamic
programming (CADP), which re-weights models by the joint probability
``b_{t,m}(s)`` of the model and the current state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import (
    INITIAL_HEADER,
    MDP_HEADER,
    fmt_float,
    load_initial_csv,
    read_metadata,
    read_transition_rows,
    tables_from_rows,
    write_metadata,
)

ROW_SUM_TOL = 1e-9
IMPROVE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Mmdp:
    """Multi-model MDP.

    Attributes
    ----------
    transitions : ndarray (M, S, A, S)
    rewards : ndarray (M, T, S, A), stage-dependent expected rewards
    lam : ndarray (M,), model weights
    mu : ndarray (S,), initial distribution
    """

    transitions: np.ndarray
    rewards: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if p.ndim != 4 or p.shape[1] != p.shape[3]:
            raise ValueError("transitions must have shape (M, S, A, S)")
        M, S, A, _ = p.shape
        if r.ndim != 4 or r.shape[0] != M or r.shape[2:] != (S, A) or r.shape[1] < 1:
            raise ValueError("rewards must have shape (M, T, S, A) with T >= 1")
        if lam.shape != (M,) or np.any(lam <= 0) or abs(lam.sum() - 1) > ROW_SUM_TOL:
            raise ValueError("model weights must be positive and sum to one")
        if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1) > ROW_SUM_TOL:
            raise ValueError("initial distribution must be a probability vector")
        if np.any(p < 0) or not np.allclose(p.sum(axis=3), 1.0, atol=ROW_SUM_TOL, rtol=0):
            raise ValueError("every model must be row-stochastic")
        for name, a in (("transitions", p), ("rewards", r), ("lam", lam), ("mu", mu)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_models(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[2]

    def with_horizon(self, horizon: int) -> "Mmdp":
        """Same models with stage-1 rewards repeated over a new horizon."""
        r = np.repeat(self.rewards[:, :1], horizon, axis=1)
        return Mmdp(self.transitions, r, self.lam, self.mu)


@dataclass(frozen=True, eq=False)
class MarkovPolicy:
    """Deterministic Markov policy: ``actions[t, s]`` for stages ``t = 0..T-1``."""

    actions: np.ndarray

    def __post_init__(self):
        a = np.array(self.actions, dtype=int)
        if a.ndim != 2:
            raise ValueError("actions must be a (T, S) table")
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def probs(self, n_actions: int) -> np.ndarray:
        T, S = self.actions.shape
        out = np.zeros((T, S, n_actions))
        np.put_along_axis(out, self.actions[..., None], 1.0, axis=2)
        return out

    def equals(self, other: "MarkovPolicy") -> bool:
        return np.array_equal(self.actions, other.actions)

    def to_json(self) -> dict:
        return {"type": "markov", "T": self.horizon, "actions": self.actions.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "MarkovPolicy":
        if obj.get("type") != "markov":
            raise ValueError("not a Markov policy document")
        pol = cls(np.array(obj["actions"], dtype=int))
        if pol.horizon != int(obj["T"]):
            raise ValueError("horizon does not match the action table")
        return pol


@dataclass
class QTensor:
    q: np.ndarray  # (T, M, S, A)
    v: np.ndarray  # (T, M, S)


@dataclass
class WeightTable:
    b: np.ndarray  # (T, M, S)


def _policy_probs(mmdp: Mmdp, policy) -> np.ndarray:
    if isinstance(policy, MarkovPolicy):
        if policy.horizon != mmdp.horizon:
            raise ValueError(f"policy horizon {policy.horizon} does not match T={mmdp.horizon}")
        if policy.actions.shape[1] != mmdp.n_states:
            raise ValueError("policy has the wrong number of states")
        if policy.actions.min() < 0 or policy.actions.max() >= mmdp.n_actions:
            raise ValueError("policy uses an invalid action index")
        return policy.probs(mmdp.n_actions)
    probs = np.asarray(policy, dtype=float)
    if probs.shape != (mmdp.horizon, mmdp.n_states, mmdp.n_actions):
        raise ValueError("randomized policy must have shape (T, S, A)")
    if np.any(probs < 0) or not np.allclose(probs.sum(axis=2), 1.0, atol=ROW_SUM_TOL, rtol=0):
        raise ValueError("randomized policy rows must be probability vectors")
    return probs


def q_values(mmdp: Mmdp, policy) -> QTensor:
    """Backward induction of ``q_{t,m}`` and ``v_{t,m}`` with ``v_{T+1} = 0``."""
    pi = _policy_probs(mmdp, policy)
    T, M, S, A = mmdp.horizon, mmdp.n_models, mmdp.n_states, mmdp.n_actions
    q = np.zeros((T, M, S, A))
    v = np.zeros((T, M, S))
    v_next = np.zeros((M, S))
    for t in range(T - 1, -1, -1):
        q[t] = mmdp.rewards[:, t] + np.einsum("msat,mt->msa", mmdp.transitions, v_next)
        v[t] = np.einsum("sa,msa->ms", pi[t], q[t])
        v_next = v[t]
    return QTensor(q, v)


def mmdp_return(mmdp: Mmdp, policy) -> float:
    """``sum_m lam_m mu' v_{1,m}``."""
    v1 = q_values(mmdp, policy).v[0]
    return float(mmdp.lam @ (v1 @ mmdp.mu))


def model_weights(mmdp: Mmdp, policy) -> WeightTable:
    """Joint probabilities ``b_{t,m}(s)`` of the model and the stage-``t`` state."""
    pi = _policy_probs(mmdp, policy)
    T, M, S = mmdp.horizon, mmdp.n_models, mmdp.n_states
    b = np.zeros((T, M, S))
    b[0] = np.outer(mmdp.lam, mmdp.mu)
    for t in range(T - 1):
        b[t + 1] = np.einsum("ms,sa,msat->mt", b[t], pi[t], mmdp.transitions)
    return WeightTable(b)


def policy_gradient(mmdp: Mmdp, policy) -> np.ndarray:
    """Gradient of the return in the randomized policy entries ``pi_t(s, a)``."""
    b = model_weights(mmdp, policy).b
    q = q_values(mmdp, policy).q
    return np.einsum("tms,tmsa->tsa", b, q)


def _argmax_low(scores: np.ndarray) -> np.ndarray:
    return np.argmax(scores, axis=-1)


def _single_model_dp(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Optimal deterministic actions ``(T, S)`` for one model with rewards ``(T, S, A)``."""
    T, S = r.shape[0], p.shape[0]
    actions = np.zeros((T, S), dtype=int)
    v = np.zeros(S)
    for t in range(T - 1, -1, -1):
        q = r[t] + p @ v
        actions[t] = _argmax_low(q)
        v = q[np.arange(S), actions[t]]
    return actions


def mvp_solve(mmdp: Mmdp) -> MarkovPolicy:
    """Optimal policy of the λ-averaged model."""
    pbar = np.einsum("m,msat->sat", mmdp.lam, mmdp.transitions)
    rbar = np.einsum("m,mtsa->tsa", mmdp.lam, mmdp.rewards)
    return MarkovPolicy(_single_model_dp(pbar, rbar))


def wsu_solve(mmdp: Mmdp) -> MarkovPolicy:
    """Backward pass choosing ``argmax_a sum_m lam_m q_{t,m}(s, a)``."""
    T, M, S = mmdp.horizon, mmdp.n_models, mmdp.n_states
    actions = np.zeros((T, S), dtype=int)
    v = np.zeros((M, S))
    for t in range(T - 1, -1, -1):
        q = mmdp.rewards[:, t] + np.einsum("msat,mt->msa", mmdp.transitions, v)
        actions[t] = _argmax_low(np.einsum("m,msa->sa", mmdp.lam, q))
        v = q[:, np.arange(S), actions[t]]
    return MarkovPolicy(actions)


def optimize_policy(mmdp: Mmdp, weights: WeightTable, prev: MarkovPolicy) -> MarkovPolicy:
    """One CADP sweep: backward over stages, maximizing ``sum_m b_{t,m}(s) q_{t,m}(s, a)``.

    ``q_t`` is computed from the values of the new policy at later stages.
    The previous action is kept whenever it attains the maximum (up to a
    relative 1e-12), otherwise the lowest maximizing index is taken; this
    keeps locally optimal policies fixed.
    """
    T, M, S = mmdp.horizon, mmdp.n_models, mmdp.n_states
    b = weights.b
    actions = np.zeros((T, S), dtype=int)
    v = np.zeros((M, S))
    idx = np.arange(S)
    for t in range(T - 1, -1, -1):
        q = mmdp.rewards[:, t] + np.einsum("msat,mt->msa", mmdp.transitions, v)
        score = np.einsum("ms,msa->sa", b[t], q)
        best = _argmax_low(score)
        top = score[idx, best]
        keep = score[idx, prev.actions[t]] >= top - IMPROVE_TOL * np.maximum(1.0, np.abs(top))
        actions[t] = np.where(keep, prev.actions[t], best)
        v = q[:, idx, actions[t]]
    return MarkovPolicy(actions)


@dataclass
class CadpResult:
    policy: MarkovPolicy
    value: float
    history: list = field(default_factory=list)
    iterations: int = 0


def cadp_solve(mmdp: Mmdp, pi0: MarkovPolicy | None = None, max_iter: int = 10**4) -> CadpResult:
    """Coordinate ascent: alternate model weights and :func:`optimize_policy`.

    Starts from the WSU policy by default and stops once the return improves
    by at most 1e-12. ``history`` lists the return of every iterate.
    """
    pi = wsu_solve(mmdp) if pi0 is None else pi0
    rho = mmdp_return(mmdp, pi)
    history = [rho]
    for it in range(1, max_iter + 1):
        new = optimize_policy(mmdp, model_weights(mmdp, pi), pi)
        rho_new = mmdp_return(mmdp, new)
        history.append(rho_new)
        if rho_new - rho <= IMPROVE_TOL:
            if rho_new >= rho:
                pi, rho = new, rho_new
            return CadpResult(pi, rho, history, it)
        pi, rho = new, rho_new
    raise RuntimeError(f"CADP did not terminate within {max_iter} iterations")


def apply_discount(mmdp: Mmdp, gamma: float) -> Mmdp:
    """Scale stage-``t`` rewards by ``gamma**(t-1)`` (stages counted from 1)."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    factors = gamma ** np.arange(mmdp.horizon)
    return Mmdp(mmdp.transitions, mmdp.rewards * factors[None, :, None, None], mmdp.lam, mmdp.mu)


def regret(mmdp: Mmdp, policy) -> float:
    """λ-weighted gap between each model's optimal return and the policy's return."""
    gaps = []
    v_pol = q_values(mmdp, policy).v[0] @ mmdp.mu
    for m in range(mmdp.n_models):
        best = _single_model_dp(mmdp.transitions[m], mmdp.rewards[m])
        single = Mmdp(mmdp.transitions[m : m + 1], mmdp.rewards[m : m + 1], [1.0], mmdp.mu)
        gaps.append(mmdp_return(single, MarkovPolicy(best)) - v_pol[m])
    return float(mmdp.lam @ np.array(gaps))


# ---------------------------------------------------------------------------
# Directory format


def load_mmdp_dir(path, horizon: int | None = None, gamma: float | None = None) -> Mmdp:
    """Load ``model_<k>.csv``, ``weights.csv`` and ``meta`` (``T``, ``gamma``).

    Model files use the MDP CSV schema; rewards are reduced to expected
    state-action rewards and repeated for every stage before discounting.
    An optional ``initial.csv`` sets μ (default: uniform).
    """
    path = Path(path)
    meta = read_metadata(path / "meta") if (path / "meta").exists() else {}
    T = horizon if horizon is not None else int(meta.get("T", 1))
    g = gamma if gamma is not None else float(meta.get("gamma", 1.0))
    files = sorted(path.glob("model_*.csv"), key=lambda f: int(f.stem.split("_")[1]))
    if not files:
        raise FileNotFoundError(f"no model_<k>.csv files in {path}")
    tables = [tables_from_rows(read_transition_rows(f)) for f in files]
    S = max(t[0].shape[0] for t in tables)
    A = max(t[0].shape[1] for t in tables)
    P = np.zeros((len(files), S, A, S))
    R = np.zeros((len(files), S, A))
    for m, (p, r, _) in enumerate(tables):
        P[m, : p.shape[0], : p.shape[1], : p.shape[2]] = p
        R[m, : p.shape[0], : p.shape[1]] = np.einsum("sat,sat->sa", p, r)
    lam = np.zeros(len(files))
    with open(path / "weights.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(c.strip() for c in header) != ("idmodel", "weight"):
            raise ValueError("weights.csv must have header idmodel,weight")
        for row in reader:
            if row:
                lam[int(row[0])] = float(row[1])
    init = path / "initial.csv"
    mu = load_initial_csv(init, S) if init.exists() else np.full(S, 1.0 / S)
    rewards = np.repeat(R[:, None], T, axis=1)
    mm = Mmdp(P, rewards, lam, mu)
    return apply_discount(mm, g) if g != 1.0 else mm


def save_mmdp_dir(mmdp: Mmdp, path, gamma: float = 1.0) -> None:
    """Write an MMDP whose stage rewards are ``gamma**t`` times the stage-1 rewards."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    base = mmdp.rewards[:, 0]
    factors = gamma ** np.arange(mmdp.horizon)
    if not np.allclose(mmdp.rewards, base[:, None] * factors[None, :, None, None], rtol=1e-12, atol=0):
        raise ValueError("rewards are not stationary up to the discount factor")
    for m in range(mmdp.n_models):
        with open(path / f"model_{m}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MDP_HEADER)
            p = mmdp.transitions[m]
            for s, a, s2 in zip(*np.nonzero(p)):
                w.writerow([s, a, s2, fmt_float(p[s, a, s2]), fmt_float(base[m, s, a])])
    with open(path / "weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["idmodel", "weight"])
        for m, lam in enumerate(mmdp.lam):
            w.writerow([m, fmt_float(lam)])
    with open(path / "initial.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INITIAL_HEADER)
        for s in np.flatnonzero(mmdp.mu):
            w.writerow([s, fmt_float(mmdp.mu[s])])
    write_metadata(path / "meta", {"T": mmdp.horizon, "gamma": fmt_float(gamma)})
