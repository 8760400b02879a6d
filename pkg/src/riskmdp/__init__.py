"""Risk-averse total-reward MDP solvers (ERM, EVaR) and multi-model MDP planning."""

from .mdp import (
    PolicyMatrices,
    StationaryPolicy,
    TransientMdp,
    ValidationReport,
    check_transient,
    discounted_to_transient,
    load_mdp_csv,
    policy_matrices,
    save_mdp_csv,
    spectral_radius,
    validate,
)
from .risk import (
    BetaGrid,
    FiniteDistribution,
    beta_grid,
    erm,
    erm_loss,
    erm_via_elicitation,
    evar,
    hoeffding_beta0,
)
from .trc import (
    ErmSolution,
    EvarSolution,
    erm_return,
    evar_solve,
    exp_bellman,
    exp_model,
    h_value,
    lp_solve,
    policy_iteration,
    risk_neutral_solve,
    value_iteration,
)

__version__ = "0.1.0"
