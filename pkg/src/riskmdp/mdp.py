"""Transient MDP model, file formats, validation and policy-induced matrices.

A transient MDP has a designated absorbing sink state ``e``. Transition and
reward tables are dense ``(S, A, S)`` arrays indexed by
``(state, action, next_state)``; the sink is an ordinary index in that range.
Actions that are not admissible in a state have all-zero transition rows.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

ROW_SUM_TOL = 1e-9
TRANSIENT_MARGIN = 1e-12
EXHAUSTIVE_CAP = 10**6

MDP_HEADER = ("idstatefrom", "idaction", "idstateto", "probability", "reward")
INITIAL_HEADER = ("idstate", "probability")


class MdpFormatError(ValueError):
    """Raised when an MDP file cannot be parsed."""


class MdpValidationError(ValueError):
    """Raised when model data violates a hard invariant."""


def fmt_float(x: float) -> str:
    """Format a float with 17 significant digits (exact round trip)."""
    return format(float(x), ".17g")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TransientMdp:
    """Finite MDP with an absorbing sink.

    Attributes
    ----------
    transitions, rewards : ndarray, shape (S, A, S)
    initial_dist : ndarray, shape (S,)
    sink : int
    admissible : ndarray of bool, shape (S, A)
    """

    transitions: np.ndarray
    rewards: np.ndarray
    initial_dist: np.ndarray
    sink: int
    admissible: np.ndarray = field(default=None)

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=float)
        r = np.asarray(self.rewards, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape:
            raise ValueError(f"rewards shape {r.shape} does not match transitions {p.shape}")
        mu = np.asarray(self.initial_dist, dtype=float)
        if mu.shape != (p.shape[0],):
            raise ValueError(f"initial_dist must have length {p.shape[0]}")
        sink = int(self.sink)
        if not 0 <= sink < p.shape[0]:
            raise ValueError(f"sink index {sink} out of range")
        if self.admissible is None:
            adm = np.ones(p.shape[:2], dtype=bool)
        else:
            adm = np.asarray(self.admissible, dtype=bool)
            if adm.shape != p.shape[:2]:
                raise ValueError(f"admissible mask must have shape {p.shape[:2]}")
        object.__setattr__(self, "transitions", _readonly(p))
        object.__setattr__(self, "rewards", _readonly(r))
        object.__setattr__(self, "initial_dist", _readonly(mu))
        object.__setattr__(self, "sink", sink)
        object.__setattr__(self, "admissible", _readonly(adm))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def nonsink(self) -> np.ndarray:
        """Indices of the non-sink states in increasing order."""
        return np.array([s for s in range(self.n_states) if s != self.sink], dtype=int)

    def equals(self, other: "TransientMdp") -> bool:
        """Exact equality of all tables."""
        return (
            self.sink == other.sink
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.initial_dist, other.initial_dist)
            and np.array_equal(self.admissible, other.admissible)
        )


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Stationary policy stored as an ``(S, A)`` table of action probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError("policy table must be 2-dimensional (S, A)")
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, atol=ROW_SUM_TOL, rtol=0):
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", _readonly(probs))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "StationaryPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    @property
    def actions(self) -> np.ndarray:
        """Action index per state; only defined for deterministic policies."""
        if not self.is_deterministic:
            raise ValueError("randomized policy has no single action per state")
        return np.argmax(self.probs, axis=1)

    def equals(self, other: "StationaryPolicy") -> bool:
        return np.array_equal(self.probs, other.probs)


@dataclass(frozen=True)
class PolicyMatrices:
    """Transition matrix among non-sink states and termination probabilities."""

    P: np.ndarray
    p_term: np.ndarray


@dataclass(frozen=True)
class Finding:
    severity: str
    code: str
    message: str
    location: str = ""


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    def add(self, severity, code, message, location=""):
        self.findings.append(Finding(severity, code, message, location))

    @property
    def errors(self):
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self):
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        """True when there are no errors (warnings are allowed)."""
        return not self.errors

    def __len__(self):
        return len(self.findings)

    def __iter__(self):
        return iter(self.findings)

    def __str__(self):
        if not self.findings:
            return "ok"
        return "\n".join(
            f"{f.severity}: {f.message} [{f.code}]" + (f" at {f.location}" if f.location else "")
            for f in self.findings
        )


# ---------------------------------------------------------------------------
# Validation


def validate(mdp: TransientMdp) -> ValidationReport:
    """Check stochasticity, sink absorption, and the initial distribution.

    Transience itself is certified separately by :func:`check_transient`.
    """
    rep = ValidationReport()
    p, r, adm, e = mdp.transitions, mdp.rewards, mdp.admissible, mdp.sink
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(r))):
        rep.add("error", "non_finite", "non-finite probability or reward")
        return rep
    bad = np.argwhere((p < 0) | (p > 1))
    for s, a, s2 in bad[:10]:
        rep.add("error", "probability_range", "probability out of range", f"({s},{a},{s2})")
    for s in range(mdp.n_states):
        if not adm[s].any():
            rep.add("error", "no_action", "state has no admissible action", f"state {s}")
    sums = p.sum(axis=2)
    for s, a in np.argwhere(adm & (np.abs(sums - 1.0) > ROW_SUM_TOL)):
        rep.add("error", "row_sum", f"transition row sums to {sums[s, a]!r}", f"({s},{a})")
    for a in np.flatnonzero(adm[e]):
        if abs(p[e, a, e] - 1.0) > ROW_SUM_TOL:
            rep.add("error", "sink_not_absorbing", "missing sink self-loop", f"action {a}")
        if r[e, a, e] != 0.0:
            rep.add("error", "sink_reward", "sink reward nonzero", f"action {a}")
    mu = mdp.initial_dist
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
        rep.add("error", "initial_dist", "initial distribution is not a probability vector")
    if mu[e] != 0.0:
        rep.add("error", "initial_sink", "initial distribution puts mass on the sink")
    if np.any(mu[mdp.nonsink] <= 0):
        rep.add("warning", "initial_not_positive", "initial distribution not strictly positive")
    return rep


def check_policy(mdp: TransientMdp, policy: StationaryPolicy) -> None:
    """Raise ``ValueError`` unless ``policy`` is admissible for ``mdp``."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match model ({mdp.n_states}, {mdp.n_actions})"
        )
    bad = np.argwhere((policy.probs > 0) & ~mdp.admissible)
    if bad.size:
        s, a = bad[0]
        raise ValueError(f"inadmissible action {a} in state {s}")


def policy_matrices(mdp: TransientMdp, policy: StationaryPolicy) -> PolicyMatrices:
    """Return ``P^d`` over non-sink states and the termination vector ``p^d``."""
    check_policy(mdp, policy)
    ns = mdp.nonsink
    full = np.einsum("sa,sat->st", policy.probs, mdp.transitions)
    return PolicyMatrices(P=full[np.ix_(ns, ns)], p_term=full[ns, mdp.sink])


# ---------------------------------------------------------------------------
# Spectral radius


def _block_radius(M: np.ndarray, tol: float, max_iter: int) -> tuple[float, bool]:
    """Perron root of an irreducible nonnegative block by shifted power iteration.

    The shift ``M + cI`` makes the block primitive. Collatz-Wielandt bounds
    ``min (Ax)_i/x_i <= rho(A) <= max (Ax)_i/x_i`` hold for every positive
    ``x`` and serve as a certified stopping rule.
    """
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0]), True
    c = max(float(M.sum(axis=1).max()), 1e-300)
    A = M + c * np.eye(n)
    x = np.ones(n) / n
    lo, hi = 0.0, float("inf")
    for _ in range(max_iter):
        y = A @ x
        ratio = y / x
        lo, hi = float(ratio.min()), float(ratio.max())
        if hi - lo <= tol * max(hi, 1e-300):
            return max(0.5 * (lo + hi) - c, 0.0), True
        x = y / y.sum()
    return max(hi - c, 0.0), False


def spectral_radius(M, tol: float = 1e-13, max_iter: int = 10**5) -> float:
    """Spectral radius of a square nonnegative matrix.

    The matrix is split into strongly connected components (the radius of a
    reducible matrix is the largest radius among its diagonal blocks), and
    each block is handled by shifted power iteration. On non-convergence the
    smaller of the Collatz-Wielandt and Gershgorin upper bounds is returned
    with a warning.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has NaN or infinite entries")
    if np.any(M < 0):
        raise ValueError("matrix has negative entries")
    if M.size == 0:
        return 0.0
    n_comp, labels = connected_components(M > 0, directed=True, connection="strong")
    best = 0.0
    converged = True
    for k in range(n_comp):
        idx = np.flatnonzero(labels == k)
        block = M[np.ix_(idx, idx)]
        if not block.any():
            continue
        rho, ok = _block_radius(block, tol, max_iter)
        if not ok:
            rho = min(rho, float(block.sum(axis=1).max()))
            converged = False
        best = max(best, rho)
    if not converged:
        warnings.warn("power iteration did not converge; reporting an upper bound", RuntimeWarning)
    return best


@dataclass
class TransienceReport:
    transient: bool
    worst_radius: float
    violating_policy: StationaryPolicy | None = None
    n_policies: int = 1


def n_deterministic_policies(mdp: TransientMdp) -> int:
    return math.prod(int(c) for c in mdp.admissible.sum(axis=1))


def check_transient(mdp: TransientMdp, policy: StationaryPolicy | None = None) -> TransienceReport:
    """Certify transience for one policy, or for all deterministic policies.

    With ``policy=None`` every deterministic policy is enumerated (capped at
    ``10**6`` policies).
    """
    if policy is not None:
        rho = spectral_radius(policy_matrices(mdp, policy).P)
        ok = rho < 1.0 - TRANSIENT_MARGIN
        return TransienceReport(ok, rho, None if ok else policy, 1)
    count = n_deterministic_policies(mdp)
    if count > EXHAUSTIVE_CAP:
        raise ValueError(f"policy space too large ({count} > {EXHAUSTIVE_CAP})")
    ns = mdp.nonsink
    choices = [np.flatnonzero(mdp.admissible[s]) for s in range(mdp.n_states)]
    P = mdp.transitions[np.ix_(ns, np.arange(mdp.n_actions), ns)]
    worst, worst_pol = -1.0, None
    rows = np.arange(len(ns))
    for combo in itertools.product(*(choices[s] for s in ns)):
        rho = spectral_radius(P[rows, np.array(combo)])
        if rho > worst:
            worst = rho
            full = np.empty(mdp.n_states, dtype=int)
            full[ns] = combo
            full[mdp.sink] = choices[mdp.sink][0]
            worst_pol = full
    ok = worst < 1.0 - TRANSIENT_MARGIN
    bad = None if ok else StationaryPolicy.deterministic(worst_pol, mdp.n_actions)
    return TransienceReport(ok, worst, bad, count)


# ---------------------------------------------------------------------------
# Discounted to transient conversion


def discounted_to_transient(
    transitions, rewards, initial_dist, gamma: float, reward_mode: str = "state_action"
) -> TransientMdp:
    """Convert a discounted MDP into a transient MDP with an appended sink.

    Parameters
    ----------
    transitions : array (S, A, S), row-stochastic
    rewards : array (S, A) for ``state_action`` mode or (S, A, S) for
        ``next_state`` mode
    gamma : discount factor in (0, 1)

    In ``next_state`` mode rewards on transitions that stay in the original
    state space are divided by ``gamma`` so that expected per-step rewards
    are preserved.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"discount factor must lie in (0, 1), got {gamma}")
    p = np.asarray(transitions, dtype=float)
    S, A, _ = p.shape
    if not np.allclose(p.sum(axis=2), 1.0, atol=ROW_SUM_TOL, rtol=0):
        raise ValueError("input transition rows must be stochastic")
    pt = np.zeros((S + 1, A, S + 1))
    pt[:S, :, :S] = gamma * p
    pt[:S, :, S] = 1.0 - gamma
    pt[S, :, S] = 1.0
    rt = np.zeros_like(pt)
    r = np.asarray(rewards, dtype=float)
    if reward_mode == "state_action":
        if r.shape != (S, A):
            raise ValueError("state_action rewards must have shape (S, A)")
        rt[:S, :, :] = r[:, :, None]
    elif reward_mode == "next_state":
        if r.shape != (S, A, S):
            raise ValueError("next_state rewards must have shape (S, A, S)")
        rt[:S, :, :S] = r / gamma
    else:
        raise ValueError(f"unknown reward mode {reward_mode!r}")
    mu = np.append(np.asarray(initial_dist, dtype=float), 0.0)
    return TransientMdp(pt, rt, mu, sink=S)


# ---------------------------------------------------------------------------
# File formats


def sidecar_paths(path) -> tuple[Path, Path]:
    """Initial-distribution and metadata paths that accompany an MDP CSV."""
    path = Path(path)
    stem = path.with_suffix("")
    return Path(f"{stem}.initial.csv"), Path(f"{stem}.meta")


def read_metadata(path) -> dict:
    meta = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise MdpFormatError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def write_metadata(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={meta[k]}\n" for k in sorted(meta)))


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise MdpFormatError(f"{path}: empty file") from None
        if tuple(c.strip() for c in first) != header:
            raise MdpFormatError(f"{path}:1: expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MdpFormatError(f"{path}:{reader.line_num}: expected {len(header)} fields")
            yield reader.line_num, row


def read_transition_rows(path):
    """Parse an MDP CSV into a list of ``(s, a, s', p, r)`` tuples."""
    rows = []
    for lineno, row in _read_rows(path, MDP_HEADER):
        try:
            s, a, s2 = (int(c) for c in row[:3])
            prob, rew = float(row[3]), float(row[4])
        except ValueError:
            raise MdpFormatError(f"{path}:{lineno}: malformed row {row}") from None
        if min(s, a, s2) < 0:
            raise MdpFormatError(f"{path}:{lineno}: negative id")
        if not 0.0 <= prob <= 1.0:
            raise MdpValidationError(f"{path}:{lineno}: probability out of range ({prob})")
        rows.append((s, a, s2, prob, rew))
    return rows


def load_initial_csv(path, n_states: int) -> np.ndarray:
    mu = np.zeros(n_states)
    for lineno, row in _read_rows(path, INITIAL_HEADER):
        try:
            s, prob = int(row[0]), float(row[1])
        except ValueError:
            raise MdpFormatError(f"{path}:{lineno}: malformed row {row}") from None
        if not 0 <= s < n_states:
            raise MdpFormatError(f"{path}:{lineno}: state {s} out of range")
        mu[s] += prob
    return mu


def tables_from_rows(rows, n_states=None, n_actions=None):
    """Dense transition, reward and admissibility tables from CSV rows.

    Duplicate ``(s, a, s')`` keys are summed; the reward of a merged key is
    the probability-weighted average so expected rewards are preserved.
    """
    S = max([n_states or 0] + [max(s, s2) + 1 for s, _, s2, _, _ in rows])
    A = max([n_actions or 0] + [a + 1 for _, a, _, _, _ in rows])
    p = np.zeros((S, A, S))
    pr = np.zeros((S, A, S))
    adm = np.zeros((S, A), dtype=bool)
    count = np.zeros((S, A, S), dtype=int)
    plain_r = np.zeros((S, A, S))
    for s, a, s2, prob, rew in rows:
        adm[s, a] = True
        p[s, a, s2] += prob
        pr[s, a, s2] += prob * rew
        plain_r[s, a, s2] = rew
        count[s, a, s2] += 1
    merged = (count > 1) & (p > 0)
    r = np.where(merged, pr / np.where(merged, p, 1.0), plain_r)
    return p, r, adm


def load_mdp_csv(path, sink=None, initial=None) -> TransientMdp:
    """Load a transient MDP from CSV, picking up sidecar files if present.

    Sidecars next to ``model.csv`` are ``model.initial.csv`` (``idstate,
    probability``) and ``model.meta`` (``key=value`` lines with ``sink``,
    ``n_states``, ``n_actions``). The sink is, in order of precedence, the
    ``sink`` argument, the metadata value, or the largest state id. Without
    an initial-distribution file, μ is uniform over the non-sink states.
    Validation errors raise :class:`MdpValidationError`.
    """
    path = Path(path)
    init_path, meta_path = sidecar_paths(path)
    meta = read_metadata(meta_path) if meta_path.exists() else {}
    rows = read_transition_rows(path)
    if not rows:
        raise MdpFormatError(f"{path}: no transitions")
    n_states = int(meta["n_states"]) if "n_states" in meta else None
    n_actions = int(meta["n_actions"]) if "n_actions" in meta else None
    p, r, adm = tables_from_rows(rows, n_states, n_actions)
    S = p.shape[0]
    if sink is None:
        sink = int(meta["sink"]) if "sink" in meta else S - 1
    if not 0 <= sink < S:
        raise MdpValidationError(f"sink {sink} out of range")
    if initial is not None:
        mu = load_initial_csv(initial, S)
    elif init_path.exists():
        mu = load_initial_csv(init_path, S)
    else:
        mu = np.ones(S)
        mu[sink] = 0.0
        mu /= mu.sum()
    mdp = TransientMdp(p, r, mu, sink, adm)
    rep = validate(mdp)
    if not rep.ok:
        raise MdpValidationError(str(ValidationReport(rep.errors)))
    return mdp


def write_transitions(mdp: TransientMdp, fh) -> None:
    """Write the transition table in the MDP CSV schema to an open text stream."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MDP_HEADER)
    for s, a in zip(*np.nonzero(mdp.admissible)):
        for s2 in np.flatnonzero(mdp.transitions[s, a] > 0):
            w.writerow([s, a, s2, fmt_float(mdp.transitions[s, a, s2]), fmt_float(mdp.rewards[s, a, s2])])


def save_mdp_csv(mdp: TransientMdp, path, sidecars: bool = True) -> None:
    """Write the model as CSV (17 significant digits) plus optional sidecars."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        write_transitions(mdp, fh)
    if sidecars:
        init_path, meta_path = sidecar_paths(path)
        with open(init_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(INITIAL_HEADER)
            for s in np.flatnonzero(mdp.initial_dist):
                w.writerow([s, fmt_float(mdp.initial_dist[s])])
        write_metadata(meta_path, {"sink": mdp.sink, "n_states": mdp.n_states, "n_actions": mdp.n_actions})
