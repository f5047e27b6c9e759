"""Rothe time discretization of coupled thermoelectric conduction with
nonlinear radiative boundary exchange, plus discrete checks of its energy estimates."""

from __future__ import annotations

from .coefficients import BoundsReport, CoefficientBundle, ScalarCoefficient, audit_bounds, integrate_B, psi
from .config import RunConfig, load_config, parse_config
from .constants import DomainConstants, check_smallness, coercivity_constants, domain_constants, max_truncation
from .discretization import DiscreteField, DomainSpec, FunctionSpace, build_mesh, norms
from .elliptic import FixedPointConfig, NewtonConfig, StepProblem, fixed_point_scheme_a, fixed_point_scheme_b
from .rothe import TimeGrid, Trajectory, build_interpolants, run, run_scheme_a, run_scheme_b
from .scenarios import scenario, scenario_names
from .verifier import compare_schemes, convergence_study, verify_global_estimate

__version__ = "0.1.0"

__all__ = [
    "BoundsReport", "CoefficientBundle", "ScalarCoefficient", "audit_bounds", "integrate_B", "psi",
    "DomainConstants", "check_smallness", "coercivity_constants", "domain_constants", "max_truncation",
    "DiscreteField", "DomainSpec", "FunctionSpace", "build_mesh", "norms",
    "FixedPointConfig", "NewtonConfig", "StepProblem", "fixed_point_scheme_a", "fixed_point_scheme_b",
    "TimeGrid", "Trajectory", "build_interpolants", "run", "run_scheme_a", "run_scheme_b",
    "RunConfig", "load_config", "parse_config", "scenario", "scenario_names",
    "compare_schemes", "convergence_study", "verify_global_estimate",
]
