"""Numerical solver and verification harness for zero-sum games between an
impulse controller (minimizer) and a stopper (maximizer)."""

from .canonical import canonical_document, canonical_spec
from .dynamics import (
    MomentReport,
    PathOutcome,
    generator_apply,
    moment_diagnostics,
    simulate_batch,
    simulate_path,
)
from .errors import (
    ConvergenceError,
    DomainError,
    LatticeError,
    SchemeError,
    SpecError,
    StaleFieldError,
)
from .mc import (
    EstimateReport,
    NeverStop,
    RegularityProbe,
    StopAtRandom,
    StopImmediately,
    deviation_report,
    estimate_value,
    regularity_probe,
)
from .model import (
    Coefficient,
    DomainSpec,
    ImpulseSet,
    ProblemSpec,
    ValidationReport,
    impulse_response,
    load_spec,
    read_spec,
    validate_assumptions,
)
from .oracle import discrete_game_value, lattice_impulse_value, lattice_stopping_value
from .payoff import PayoffBreakdown, batch_payoff, evaluate_payoff
from .policy import (
    FeedbackPolicy,
    dpp_residual,
    dpp_residual_field,
    extract_policy,
    mean_dpp_residual,
)
from .qvi import (
    Grid,
    SolverParams,
    ValueField,
    build_grid,
    intervention_operator,
    pde_residual,
    solve_qvi,
)

__version__ = "0.1.0"

__all__ = [
    "Coefficient",
    "ConvergenceError",
    "DomainError",
    "DomainSpec",
    "EstimateReport",
    "FeedbackPolicy",
    "Grid",
    "ImpulseSet",
    "LatticeError",
    "MomentReport",
    "NeverStop",
    "PathOutcome",
    "PayoffBreakdown",
    "ProblemSpec",
    "RegularityProbe",
    "SchemeError",
    "SolverParams",
    "SpecError",
    "StaleFieldError",
    "StopAtRandom",
    "StopImmediately",
    "ValidationReport",
    "ValueField",
    "batch_payoff",
    "build_grid",
    "canonical_document",
    "canonical_spec",
    "deviation_report",
    "discrete_game_value",
    "dpp_residual",
    "dpp_residual_field",
    "estimate_value",
    "evaluate_payoff",
    "extract_policy",
    "generator_apply",
    "impulse_response",
    "intervention_operator",
    "lattice_impulse_value",
    "lattice_stopping_value",
    "load_spec",
    "mean_dpp_residual",
    "moment_diagnostics",
    "pde_residual",
    "read_spec",
    "regularity_probe",
    "simulate_batch",
    "simulate_path",
    "solve_qvi",
    "validate_assumptions",
]
