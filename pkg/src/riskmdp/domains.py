"""Benchmark domains: gambler's ruin, cliff walk, a one-state chain, and a
two-model MMDP on which no Markov policy has sublinear regret."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import TransientMdp
from .mmdp import Mmdp


@dataclass(frozen=True)
class GamblerSpec:
    win_prob: float = 0.68
    cap: int = 7

    def __post_init__(self):
        if not 0.0 <= self.win_prob <= 1.0:
            raise ValueError("win probability must lie in [0, 1]")
        if self.cap < 2:
            raise ValueError("cap must be at least 2")


def gamblers_ruin(spec: GamblerSpec = GamblerSpec()) -> TransientMdp:
    """Gambler's ruin with capital states ``0..K`` and sink ``K + 1``.

    Action 0 quits and collects the current capital (capital 0 ends with
    reward -1). Action ``a >= 1`` bets ``a`` units: capital moves to
    ``min(s + a, K)`` with the win probability and to ``s - a`` otherwise.
    States 0 and ``K`` only allow action 0. The initial distribution is
    uniform over capitals ``1..K``.
    """
    q, K = spec.win_prob, spec.cap
    S, A, e = K + 2, K, K + 1
    p = np.zeros((S, A, S))
    r = np.zeros((S, A, S))
    adm = np.zeros((S, A), dtype=bool)
    for s in range(K + 1):
        adm[s, 0] = True
        p[s, 0, e] = 1.0
        r[s, 0, e] = -1.0 if s == 0 else float(s)
    for s in range(1, K):
        for a in range(1, s + 1):
            adm[s, a] = True
            p[s, a, min(s + a, K)] += q
            p[s, a, s - a] += 1.0 - q
    adm[e, 0] = True
    p[e, 0, e] = 1.0
    mu = np.zeros(S)
    mu[1 : K + 1] = 1.0 / K
    return TransientMdp(p, r, mu, e, adm)


# Layout of the 7x7 cliff walk as (row, col) with row 0 at the top.
CLIFF_LAYOUT = {
    "rows": 7,
    "cols": 7,
    "start": (0, 6),
    "goal": (6, 6),
    "bonus": (5, 2),
    "cliff": {(6, 1): -0.5, (6, 2): -0.6, (6, 3): -0.7, (6, 4): -0.8, (6, 5): -0.9},
}
CLIFF_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
CLIFF_ACTION_NAMES = ("up", "down", "left", "right")


@dataclass(frozen=True)
class CliffSpec:
    intended_prob: float = 0.91
    slip_prob: float = 0.03
    goal_reward: float = 2.0
    bonus_reward: float = 0.004

    def __post_init__(self):
        if abs(self.intended_prob + 3 * self.slip_prob - 1.0) > 1e-12:
            raise ValueError("intended and slip probabilities must sum to one")


def cliff_cells() -> list:
    """Grid cells in row-major order; cell ``k`` is state ``k``."""
    L = CLIFF_LAYOUT
    return [(i, j) for i in range(L["rows"]) for j in range(L["cols"])]


def cliff_walk(spec: CliffSpec = CliffSpec()) -> TransientMdp:
    """Slippery 7x7 cliff walk with one state per cell plus a sink.

    Rewards belong to the state being left. Every action at the goal pays
    ``goal_reward`` and ends the episode. Every action at a cliff cell pays
    the cell's penalty and moves the agent back to the start cell ``b``.
    Elsewhere the actions are up, down, left and right: the chosen move
    happens with ``intended_prob`` and each other move with ``slip_prob``,
    moves off the grid leave the agent in place, and acting from the bonus
    cell pays ``bonus_reward``. The initial distribution is uniform over all
    cells except the goal.
    """
    L = CLIFF_LAYOUT
    cells = cliff_cells()
    index = {c: k for k, c in enumerate(cells)}
    S, A = len(cells) + 1, 4
    e = S - 1
    p = np.zeros((S, A, S))
    r = np.zeros((S, A, S))
    goal, start = index[L["goal"]], index[L["start"]]
    for (i, j), s in index.items():
        if s == goal:
            p[s, :, e] = 1.0
            r[s, :, e] = spec.goal_reward
            continue
        if (i, j) in L["cliff"]:
            p[s, :, start] = 1.0
            r[s, :, start] = L["cliff"][(i, j)]
            continue
        rew = spec.bonus_reward if (i, j) == L["bonus"] else 0.0
        for a in range(A):
            for m, (di, dj) in enumerate(CLIFF_MOVES):
                ni, nj = i + di, j + dj
                if not (0 <= ni < L["rows"] and 0 <= nj < L["cols"]):
                    ni, nj = i, j
                t = index[(ni, nj)]
                p[s, a, t] += spec.intended_prob if m == a else spec.slip_prob
                r[s, a, t] = rew
    p[e, :, e] = 1.0
    mu = np.ones(S)
    mu[[goal, e]] = 0.0
    mu /= mu.sum()
    return TransientMdp(p, r, mu, e)


@dataclass(frozen=True)
class ChainSpec:
    r: float = -1.0
    eps: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise ValueError("eps must lie in [0, 1)")


def chain_mdp(spec: ChainSpec = ChainSpec()) -> TransientMdp:
    """One state plus sink: self-loop with probability ``eps`` and reward
    ``r``; termination with probability ``1 - eps`` and reward 0."""
    p = np.zeros((2, 1, 2))
    rw = np.zeros((2, 1, 2))
    p[0, 0, 0] = spec.eps
    p[0, 0, 1] = 1.0 - spec.eps
    if spec.eps > 0:
        rw[0, 0, 0] = spec.r
    p[1, 0, 1] = 1.0
    return TransientMdp(p, rw, np.array([1.0, 0.0]), 1)


def chain_erm_closed_form(spec: ChainSpec, beta: float, t: float = math.inf) -> float:
    """ERM of the chain's return, truncated after ``t`` steps or in the limit.

    Runs that have not terminated within ``t`` steps contribute zero to the
    exponential expectation, matching value iteration started at ``w = 0``.
    Returns ``-inf`` when the limit is unbounded (``eps * exp(-beta r) >= 1``).
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    eps, r = spec.eps, spec.r
    ratio = eps * math.exp(-beta * r)
    if math.isinf(t):
        if ratio >= 1.0:
            return -math.inf
        return -math.log((1.0 - eps) / (1.0 - ratio)) / beta
    k = np.arange(int(t))
    total = np.sum((1.0 - eps) * eps**k * np.exp(-beta * r * k))
    return -math.log(total) / beta if total > 0 else -math.inf


def counterexample_mmdp(lam: float = 0.5, horizon: int = 3) -> Mmdp:
    """Two-model MMDP on which every Markov policy has linear regret.

    States 0..3 and actions 0..1. In state 0 action 0 moves to state 1 with
    reward 2 in both models. Action 1 moves to state 2 with reward 0 in model
    0 and to state 3 with reward 3 in model 1. States 1, 2 and 3 return to
    state 0 unless they are absorbing in that model (state 3 in model 0,
    state 2 in model 1). The episode starts in state 0.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    S, A = 4, 2
    p = np.zeros((2, S, A, S))
    r = np.zeros((2, S, A))
    for m in range(2):
        p[m, 0, 0, 1] = 1.0
        r[m, 0, 0] = 2.0
        p[m, 1, :, 0] = 1.0
    p[0, 0, 1, 2] = 1.0
    p[0, 2, :, 0] = 1.0
    p[0, 3, :, 3] = 1.0
    p[1, 0, 1, 3] = 1.0
    r[1, 0, 1] = 3.0
    p[1, 3, :, 0] = 1.0
    p[1, 2, :, 2] = 1.0
    rewards = np.repeat(r[:, None], horizon, axis=1)
    mu = np.array([1.0, 0.0, 0.0, 0.0])
    return Mmdp(p, rewards, np.array([lam, 1.0 - lam]), mu)
