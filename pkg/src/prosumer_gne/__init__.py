"""Distributed generalized Nash equilibrium seeking for prosumer energy sharing."""

from .errors import (
    DisconnectedGraphError,
    InfeasibleError,
    MaxIterationsExceeded,
    MissingNeighborMessage,
    NoBracketError,
    NonSymmetricError,
    NotPDError,
    POutsideBoxError,
    ScenarioError,
)
from .graph import CommGraph, laplacian
from .market import (
    MarketParams,
    ProsumerParams,
    ScenarioInstance,
    StrategyProfile,
    clearing_price,
    demand,
    eval_f,
    eval_g,
    market_clearing_gap,
    pseudo_gradient,
    sharing_coefficients,
    vi_residual,
)
from .equivalent import (
    EquivalentProblem,
    KKTPoint,
    OracleReport,
    build,
    kkt_residual,
    oracle_solve,
    recover_b,
)
from .sgne import StepSizes, IterState, default_step_sizes, theta_assemble, theta_is_pd
from .runtime import SolveReport, StopTolerances, locality_audit, run_sgne
from .scenarios import ScenarioFile, builtin, random_instance, random_instances

__version__ = "0.1.0"
