"""Soft-robust batch reinforcement learning on tabular MDPs."""
from .errors import ArgumentError, ConvergenceError, NumericError, SrmdpError, UnsupportedError
from .mdp import (
    ModelEnsemble,
    Policy,
    TabularMdp,
    TransitionModel,
    evaluate_policy,
    expected_return,
    occupancy_frequency,
    return_distribution,
    value_iteration,
)
from .risk import SoftRobustParams, cvar_dual, cvar_primal, rho_D_grid, rho_S, soft_robust_combine, value_at_risk
from .robust import S_RECT, SA_RECT, rho_R, robust_value_iteration
from .milp import brute_force_deterministic, build_model, solve_branch_and_bound
from .srvi import FeatureMap, SrviConfig, srvi_solve

__version__ = "0.1.0"
