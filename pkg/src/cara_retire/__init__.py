"""Optimal consumption, portfolio and retirement under CARA utility."""

from cara_retire.boundary import (
    FreeBoundary,
    Regime,
    income_thresholds,
    r_integral,
    r_integral_quadrature,
    solve_boundary,
    verify_variational,
    w_coefficient,
    w_value,
)
from cara_retire.duals import (
    PreDual,
    StationaryDual,
    merton_dual,
    post_dual,
    pre_coefficients,
    pre_dual,
    pre_value,
    stationary_value,
)
from cara_retire.montecarlo import (
    Estimate,
    SimConfig,
    estimate_full_dual,
    estimate_pre_dual,
    estimate_stationary_dual,
    run_verification,
    simulate_dual_path,
    verify_budget_and_transversality,
)
from cara_retire.policy import (
    Phase,
    PolicyPoint,
    RetirementSolution,
    compare_at,
    invert_marginal,
    policy_at,
    primal_value,
    retirement_wealth,
    solve,
    statics_sweep,
)
from cara_retire.errors import DomainError, NoRetirementError, ParameterError
from cara_retire.market import (
    MarketParams,
    Preferences,
    RiskRoots,
    derive_roots,
    dual_consumption,
    dual_utility,
    gap_income_root,
    leisure_factor,
    no_retirement_threshold,
    utility_gap,
)

__all__ = [
    "DomainError",
    "Estimate",
    "FreeBoundary",
    "MarketParams",
    "NoRetirementError",
    "ParameterError",
    "Phase",
    "PolicyPoint",
    "PreDual",
    "Preferences",
    "Regime",
    "RetirementSolution",
    "RiskRoots",
    "SimConfig",
    "StationaryDual",
    "compare_at",
    "derive_roots",
    "dual_consumption",
    "dual_utility",
    "estimate_full_dual",
    "estimate_pre_dual",
    "estimate_stationary_dual",
    "gap_income_root",
    "income_thresholds",
    "invert_marginal",
    "leisure_factor",
    "merton_dual",
    "no_retirement_threshold",
    "policy_at",
    "post_dual",
    "pre_coefficients",
    "pre_dual",
    "pre_value",
    "primal_value",
    "r_integral",
    "r_integral_quadrature",
    "retirement_wealth",
    "run_verification",
    "simulate_dual_path",
    "solve",
    "solve_boundary",
    "statics_sweep",
    "stationary_value",
    "utility_gap",
    "verify_budget_and_transversality",
    "verify_variational",
    "w_coefficient",
    "w_value",
]
