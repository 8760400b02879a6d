"""Shared fixtures: random models and brute-force reference computations."""

from __future__ import annotations

import itertools
import math

import numpy as np

from riskmdp.mdp import StationaryPolicy, TransientMdp


def random_transient_mdp(rng, n_states=None, n_actions=None, p_term=(0.3, 0.6), reward_scale=1.0):
    """Random MDP in which every action terminates with probability in ``p_term``.

    Every stationary policy is transient, and for ``beta * reward_scale <=
    -log(1 - p_term[0])`` every policy has a bounded ERM value because the
    rows of ``B^d`` sum to less than one.
    """
    S = int(n_states or rng.integers(2, 7))
    A = int(n_actions or rng.integers(1, 4))
    e = S
    p = np.zeros((S + 1, A, S + 1))
    r = np.zeros_like(p)
    for s in range(S):
        for a in range(A):
            term = rng.uniform(*p_term)
            w = rng.random(S) * (rng.random(S) < 0.7)
            if w.sum() == 0:
                w[rng.integers(S)] = 1.0
            p[s, a, :S] = (1.0 - term) * w / w.sum()
            p[s, a, e] = term
            r[s, a, :] = reward_scale * rng.uniform(-1.0, 1.0, S + 1)
    p[e, :, e] = 1.0
    r[e] = 0.0
    r = np.where(p > 0, r, 0.0)
    mu = np.append(rng.dirichlet(np.ones(S)), 0.0)
    return TransientMdp(p, r, mu, e)


def deterministic_policies(mdp: TransientMdp):
    """Every deterministic stationary policy of ``mdp``."""
    choices = [np.flatnonzero(mdp.admissible[s]) for s in range(mdp.n_states)]
    for combo in itertools.product(*choices):
        yield StationaryPolicy.deterministic(combo, mdp.n_actions)


def erm_by_power_series(mdp: TransientMdp, policy: StationaryPolicy, beta: float, steps: int = 5000) -> np.ndarray:
    """``E[exp(-beta X)]`` per start state by summing the exponential
    transition matrix over ``steps`` stages (no linear solve)."""
    W = np.where(mdp.transitions > 0, mdp.transitions * np.exp(-beta * mdp.rewards), 0.0)
    M = np.einsum("sa,sat->st", policy.probs, W)
    ns = mdp.nonsink
    B, b = M[np.ix_(ns, ns)], M[ns, mdp.sink]
    total = np.zeros(len(ns))
    term = b.copy()
    for _ in range(steps):
        total += term
        term = B @ term
    return total


def discounted_value(p, r, gamma, policy_actions):
    """Discounted value of a deterministic policy by truncated series."""
    S = p.shape[0]
    idx = np.arange(S)
    P, rr = p[idx, policy_actions], r[idx, policy_actions]
    v = np.zeros(S)
    term = rr.copy()
    for k in range(int(math.log(1e-14) / math.log(gamma)) + 50):
        v += term
        term = gamma * (P @ term)
    return v
