import math

import numpy as np
import pytest

from riskmdp.domains import ChainSpec, GamblerSpec, chain_erm_closed_form, chain_mdp, cliff_walk, gamblers_ruin
from riskmdp.mdp import StationaryPolicy, TransientMdp
from riskmdp.risk import erm_curve
from riskmdp.simulate import exact_return_distribution
from riskmdp.trc import (
    RiskLevelError,
    UnboundedError,
    erm_return,
    evar_solve,
    exp_bellman,
    exp_model,
    h_value,
    lp_solve,
    policy_iteration,
    policy_value,
    risk_neutral_solve,
    solve_erm,
    value_iteration,
)

from helpers import deterministic_policies, erm_by_power_series, random_transient_mdp

SOLVERS = [value_iteration, policy_iteration, lp_solve]


class TestExpModel:
    def test_operator_is_affine(self):
        m = chain_mdp(ChainSpec(1.0, 0.4))
        model = exp_model(m, 0.5)
        w, _ = exp_bellman(model, np.array([-2.0]))
        np.testing.assert_allclose(w, [0.4 * math.exp(-0.5) * -2.0 - 0.6])

    def test_risk_level_overflow(self):
        with pytest.raises(RiskLevelError):
            exp_model(chain_mdp(ChainSpec(-1.0, 0.5)), 1e4)

    def test_beta_must_be_positive(self):
        with pytest.raises(ValueError):
            exp_model(chain_mdp(), 0.0)


class TestChainSolvers:
    @pytest.mark.parametrize("solver", SOLVERS)
    @pytest.mark.parametrize("r,eps,beta", [(-1.0, 0.5, 0.5), (2.0, 0.9, 1.0), (-0.3, 0.95, 0.1)])
    def test_closed_form(self, solver, r, eps, beta):
        sol = solver(chain_mdp(ChainSpec(r, eps)), beta)
        assert sol.bounded
        np.testing.assert_allclose(sol.v[0], chain_erm_closed_form(ChainSpec(r, eps), beta), atol=1e-9)
        assert sol.v[1] == 0.0

    @pytest.mark.parametrize("solver", SOLVERS)
    def test_unbounded(self, solver):
        sol = solver(chain_mdp(ChainSpec(-1.0, 0.9)), 0.2)
        assert not sol.bounded
        assert sol.g_mu == -math.inf and sol.v[0] == -math.inf


class TestBruteForce:
    def test_optimal_erm_matches_policy_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            m = random_transient_mdp(rng, 3, 2)
            beta = rng.uniform(0.05, 0.3)
            best = -np.inf
            for pol in deterministic_policies(m):
                ew = erm_by_power_series(m, pol, beta)
                best = max(best, -math.log(np.dot(m.initial_dist[m.nonsink], ew)) / beta)
            for solver in SOLVERS:
                np.testing.assert_allclose(solver(m, beta).g_mu, best, atol=1e-9)

    def test_erm_return_matches_enumerated_distribution(self):
        m = gamblers_ruin(GamblerSpec(0.6, 4))
        actions = [0, 1, 1, 1, 0, 0]
        pol = StationaryPolicy.deterministic(actions, m.n_actions)
        dist = exact_return_distribution(m, pol, horizon_cap=400).finite()
        for beta in (0.1, 0.7, 2.0):
            np.testing.assert_allclose(erm_return(m, pol, beta), erm_curve(dist, [beta])[0], atol=1e-9)

    def test_policy_value_risk_neutral(self):
        rng = np.random.default_rng(6)
        m = random_transient_mdp(rng, 4, 2)
        sol = risk_neutral_solve(m)
        best = max(np.dot(m.initial_dist, policy_value(m, p)) for p in deterministic_policies(m))
        np.testing.assert_allclose(sol.g_mu, best, atol=1e-12)

    def test_small_beta_tends_to_risk_neutral(self):
        m = gamblers_ruin()
        np.testing.assert_allclose(solve_erm(m, 1e-6).g_mu, risk_neutral_solve(m).g_mu, atol=1e-4)


class TestSolverDetails:
    def test_policy_iteration_from_initial_policy(self):
        m = gamblers_ruin()
        pi0 = StationaryPolicy.deterministic(np.zeros(m.n_states, dtype=int), m.n_actions)
        a = policy_iteration(m, 0.5, pi0=pi0)
        b = lp_solve(m, 0.5)
        np.testing.assert_allclose(a.v, b.v, atol=1e-10)

    def test_residual_is_small(self):
        sol = value_iteration(gamblers_ruin(), 1.0)
        assert sol.residual <= 1e-12

    def test_cliff_near_improper_rules(self):
        # Some cliff rules terminate with tiny probability per step; value
        # iteration from zero must still reach the least fixed point.
        m = cliff_walk()
        v = value_iteration(m, 2.0).v
        np.testing.assert_allclose(v, lp_solve(m, 2.0).v, atol=1e-9)
        np.testing.assert_allclose(v, policy_iteration(m, 2.0).v, atol=1e-9)

    def test_cliff_unbounded_at_large_beta(self):
        m = cliff_walk()
        assert not lp_solve(m, 10.0).bounded

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            solve_erm(chain_mdp(), 1.0, "simplex")

    def test_erm_return_unbounded_policy(self):
        m = chain_mdp(ChainSpec(-1.0, 0.9))
        assert erm_return(m, StationaryPolicy.deterministic([0, 0], 1), 0.5) == -math.inf


class TestHValue:
    def test_formula(self):
        assert h_value(1.0, 2.0, 0.5) == pytest.approx(1.0 + math.log(0.5) / 2)
        assert h_value(-math.inf, 1.0, 0.5) == -math.inf


class TestEvar:
    def test_against_policy_enumeration(self):
        m = gamblers_ruin(GamblerSpec(0.68, 4))
        alpha, delta = 0.3, 0.01
        sol = evar_solve(m, alpha, delta)
        betas = np.exp(np.linspace(math.log(1e-3), math.log(60), 600))
        best = -np.inf
        for pol in deterministic_policies(m):
            dist = exact_return_distribution(m, pol, horizon_cap=300).finite()
            best = max(best, float(np.max(erm_curve(dist, betas) + math.log(alpha) / betas)))
        assert sol.value <= best + 1e-6
        assert sol.value >= best - delta

    def test_policy_attains_value(self):
        m = gamblers_ruin()
        sol = evar_solve(m, 0.4, 0.01)
        g = erm_return(m, sol.policy, sol.beta_star)
        np.testing.assert_allclose(g + math.log(0.4) / sol.beta_star, sol.value, atol=1e-10)

    def test_explicit_grid_and_pruning(self):
        m = gamblers_ruin()
        betas = np.geomspace(0.01, 20, 60)
        a = evar_solve(m, 0.4, 0.01, betas=betas, prune=True)
        b = evar_solve(m, 0.4, 0.01, betas=betas, prune=False)
        assert a.value == pytest.approx(b.value, abs=1e-12)
        assert a.beta_star == b.beta_star

    def test_methods_agree(self):
        m = gamblers_ruin()
        vals = [evar_solve(m, 0.3, 0.05, method=k).value for k in ("vi", "pi", "lp")]
        np.testing.assert_allclose(vals, vals[0], atol=1e-9)

    def test_all_unbounded(self):
        with pytest.raises(UnboundedError):
            evar_solve(chain_mdp(ChainSpec(-1.0, 0.9)), 0.5, 0.1, betas=[0.2, 0.3])

    def test_alpha_checked(self):
        with pytest.raises(ValueError):
            evar_solve(gamblers_ruin(), 1.0, 0.01)

    def test_sink_only_model(self):
        # Degenerate model whose only state is the sink.
        p = np.ones((1, 1, 1))
        m = TransientMdp(p, np.zeros_like(p), [0.0], 0)
        sol = value_iteration(m, 1.0)
        assert sol.bounded and sol.g_mu == 0.0
