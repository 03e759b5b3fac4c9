"""Stochastic GOY shell model with Gaussian and Poisson noise, its skeleton
equation, control costs and large-deviation checks."""

__version__ = "0.1.0"

from .control import (
    OptimizerConfig,
    RateQuery,
    RateResult,
    minimize_rate,
    rate_upper_bound,
    solve_skeleton,
)
from .control_path import ControlPath, CostBreakdown, cost, ell
from .errors import BlowUpError, ConfigurationError, DomainError, GoyldError, PreconditionError
from .noise import CoefficientFamily, CovarianceQ, MarkSpace, audit_hypotheses
from .sde import IntegratorConfig, Trajectory, simulate, simulate_controlled, simulate_ensemble
from .shell_core import ModelParams, ShellGrid, apply_A, apply_B, apply_F, norms

__all__ = [
    "BlowUpError",
    "CoefficientFamily",
    "ConfigurationError",
    "ControlPath",
    "CostBreakdown",
    "CovarianceQ",
    "DomainError",
    "GoyldError",
    "IntegratorConfig",
    "MarkSpace",
    "ModelParams",
    "OptimizerConfig",
    "PreconditionError",
    "RateQuery",
    "RateResult",
    "ShellGrid",
    "Trajectory",
    "apply_A",
    "apply_B",
    "apply_F",
    "audit_hypotheses",
    "cost",
    "ell",
    "minimize_rate",
    "norms",
    "rate_upper_bound",
    "simulate",
    "simulate_controlled",
    "simulate_ensemble",
    "solve_skeleton",
]
