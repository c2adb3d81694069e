"""Cardinality-constrained distributionally robust portfolio selection.

A moment-based ambiguity set around the sample mean and covariance, a
piecewise-linear concave utility and a ridge term give a lower-level
semidefinite program for each asset selection.  The selection itself is found
by a cutting-plane method whose cuts come from a dual solution computed in the
dimension of the selection and completed to the full asset space.
"""
from .backtest import BacktestConfig, BacktestReport, DRStrategy, MVStrategy, cumulative_return, rolling_backtest
from .baselines import GloballyInfeasible, MeanVarianceSpec, first_quartile_return, solve_mean_variance
from .conic import Cone, ConeProgram, ConicSolution, IpmSettings, Status, solve as solve_conic, verify_certificate
from .data_io import ReturnMatrix, parse_orlibrary, parse_returns_csv, write_result_json
from .lower_level import (
    Cut,
    LiftInfeasible,
    SolverFailure,
    evaluate,
    lift,
    recover_portfolio,
    solve_full_dual,
    solve_full_primal,
    solve_lower,
    subgradient_cut,
)
from .model import (
    Instance,
    Moments,
    Portfolio,
    Selection,
    UncertaintySet,
    UtilityPWL,
    build_utility_tangents,
    default_utility,
    estimate_moments,
    validate_instance,
)
from .upper_level import (
    MasterState,
    SolveConfig,
    SolveResult,
    cutting_plane_solve,
    initial_lower_bound,
    solve_master_relaxation,
)

__version__ = "0.1.0"
