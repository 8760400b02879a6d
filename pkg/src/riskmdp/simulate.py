"""Monte Carlo and exact evaluation of stationary policies.

Episode ``i`` of a batch draws from its own generator seeded by
``SeedSequence(seed, spawn_key=(i,))``, so each episode is reproducible on
its own and results do not depend on execution order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import StationaryPolicy, TransientMdp, check_policy, fmt_float
from .risk import FiniteDistribution, erm, evar

BIN = 1e-12
NODE_CAP = 10**6


@dataclass(frozen=True)
class Rollout:
    ret: float
    steps: int
    truncated: bool


@dataclass(eq=False)
class ReturnDistribution:
    """Exact (``dist``) or empirical (``samples``) distribution of episode returns."""

    kind: str
    episodes: int
    truncated: int = 0
    samples: np.ndarray | None = None
    dist: FiniteDistribution | None = None

    def __post_init__(self):
        if self.kind == "empirical":
            if self.samples is None or len(self.samples) == 0:
                raise ValueError("empirical distribution needs samples")
        elif self.kind == "exact":
            if self.dist is None:
                raise ValueError("exact distribution needs a FiniteDistribution")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    def finite(self) -> FiniteDistribution:
        if self.kind == "exact":
            return self.dist
        return FiniteDistribution.from_samples(self.samples)

    @property
    def truncated_fraction(self) -> float:
        return self.truncated / self.episodes if self.episodes else 0.0

    def mean(self) -> float:
        if self.kind == "empirical":
            return float(np.mean(self.samples))
        return self.dist.mean()

    def std(self) -> float:
        if self.kind == "empirical":
            return float(np.std(self.samples))
        d = self.dist
        return float(math.sqrt(max(np.dot(d.probs, (d.outcomes - d.mean()) ** 2), 0.0)))

    def support(self) -> np.ndarray:
        if self.kind == "empirical":
            return np.unique(self.samples)
        return np.sort(self.dist.support)

    def masses(self) -> dict:
        """Probability of each distinct return value."""
        f = self.finite()
        return {float(x): float(p) for x, p in zip(f.outcomes, f.probs) if p > 0}


class _Sampler:
    """Cumulative tables for drawing start states, actions and next states."""

    def __init__(self, mdp: TransientMdp, policy: StationaryPolicy):
        check_policy(mdp, policy)
        self.mdp = mdp
        self.mu_cum = np.cumsum(mdp.initial_dist)
        self.pol_cum = np.cumsum(policy.probs, axis=1)
        self.p_cum = np.cumsum(mdp.transitions, axis=2)
        self.rewards = mdp.rewards
        self.sink = mdp.sink

    @staticmethod
    def _draw(cum, u):
        k = int(np.searchsorted(cum, u * cum[-1], side="right"))
        return min(k, len(cum) - 1)

    def episode(self, rng: np.random.Generator, max_steps: int, start: int | None = None) -> Rollout:
        s = self._draw(self.mu_cum, rng.random()) if start is None else int(start)
        total, steps = 0.0, 0
        buf = rng.random(64)
        pos = 0
        while s != self.sink:
            if steps >= max_steps:
                return Rollout(total, steps, True)
            if pos + 2 > len(buf):
                buf, pos = rng.random(64), 0
            a = self._draw(self.pol_cum[s], buf[pos])
            s2 = self._draw(self.p_cum[s, a], buf[pos + 1])
            pos += 2
            total += self.rewards[s, a, s2]
            s = s2
            steps += 1
        return Rollout(total, steps, False)


def episode_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def rollout(
    mdp: TransientMdp, policy: StationaryPolicy, seed: int, max_steps: int = 20000, start: int | None = None
) -> Rollout:
    """Simulate one episode from μ (or ``start``) until the sink or ``max_steps``."""
    return _Sampler(mdp, policy).episode(np.random.default_rng(seed), max_steps, start)


def return_distribution(
    mdp: TransientMdp, policy: StationaryPolicy, episodes: int, seed: int = 0, max_steps: int = 20000
) -> ReturnDistribution:
    """Empirical return distribution over ``episodes`` independent episodes."""
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    sampler = _Sampler(mdp, policy)
    returns = np.empty(episodes)
    truncated = 0
    for i in range(episodes):
        out = sampler.episode(episode_rng(seed, i), max_steps)
        returns[i] = out.ret
        truncated += out.truncated
    return ReturnDistribution("empirical", episodes, truncated, samples=returns)


def exact_return_distribution(
    mdp: TransientMdp, policy: StationaryPolicy, horizon_cap: int, node_cap: int = NODE_CAP
) -> ReturnDistribution:
    """Exact distribution of returns truncated after ``horizon_cap`` steps.

    The forward enumeration tracks ``(state, accumulated return)`` pairs,
    merging returns that agree on a 1e-12 grid. Mass still outside the sink
    after ``horizon_cap`` steps keeps its accumulated return and is reported
    in ``truncated`` as a count of such (state, return) nodes.
    """
    check_policy(mdp, policy)
    P, R, pol = mdp.transitions, mdp.rewards, policy.probs
    frontier = {}
    for s in np.flatnonzero(mdp.initial_dist):
        if s == mdp.sink:
            continue
        frontier[(int(s), 0)] = (0.0, float(mdp.initial_dist[s]))
    done: dict = {}

    def add(table, key, ret, prob):
        if key in table:
            table[key] = (table[key][0], table[key][1] + prob)
        else:
            table[key] = (ret, prob)

    expanded = 0
    for _ in range(horizon_cap):
        if not frontier:
            break
        nxt = {}
        for (s, _), (ret, prob) in frontier.items():
            expanded += 1
            if expanded > node_cap:
                raise RuntimeError(f"node cap {node_cap} exceeded")
            for a in np.flatnonzero(pol[s]):
                for s2 in np.flatnonzero(P[s, a]):
                    r2 = ret + R[s, a, s2]
                    pr = prob * pol[s, a] * P[s, a, s2]
                    key = round(r2 / BIN)
                    if s2 == mdp.sink:
                        add(done, key, r2, pr)
                    else:
                        add(nxt, (int(s2), key), r2, pr)
        frontier = nxt
    n_trunc = len(frontier)
    for (_, key), (ret, prob) in frontier.items():
        add(done, key, ret, prob)
    items = sorted(done.values())
    outcomes = np.array([x for x, _ in items])
    probs = np.array([p for _, p in items])
    probs = probs / probs.sum()
    return ReturnDistribution("exact", 1, n_trunc, dist=FiniteDistribution(outcomes, probs))


def empirical_risk(dist: ReturnDistribution, measure: str, level: float | None = None) -> float:
    """Risk of a return distribution: ``"mean"``, ``"erm"`` (level β) or ``"evar"`` (level α)."""
    f = dist.finite()
    if measure == "mean":
        return f.mean()
    if measure == "erm":
        return erm(f, level)
    if measure == "evar":
        return evar(f, level)
    raise ValueError(f"unknown risk measure {measure!r}")


def write_distribution_csv(dist: ReturnDistribution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if dist.kind == "exact":
            w.writerow(["return", "probability"])
            for x, p in zip(dist.dist.outcomes, dist.dist.probs):
                w.writerow([fmt_float(x), fmt_float(p)])
        else:
            w.writerow(["episode", "return"])
            for i, x in enumerate(dist.samples):
                w.writerow([i, fmt_float(x)])


def summary(dist: ReturnDistribution, erm_levels=(), evar_levels=()) -> dict:
    f = dist.finite()
    out = {
        "kind": dist.kind,
        "episodes": dist.episodes,
        "truncated": dist.truncated,
        "mean": dist.mean(),
        "std": dist.std(),
        "min": float(f.support.min()),
        "max": float(f.support.max()),
    }
    if erm_levels:
        out["erm"] = {fmt_float(b): erm(f, b) for b in erm_levels}
    if evar_levels:
        out["evar"] = {fmt_float(a): evar(f, a) for a in evar_levels}
    return out


def write_summary_json(dist: ReturnDistribution, path, **kw) -> None:
    Path(path).write_text(json.dumps(summary(dist, **kw), sort_keys=True, indent=2) + "\n")
