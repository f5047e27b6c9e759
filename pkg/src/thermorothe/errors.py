"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ThermoRotheError(Exception):
    """Base class for all package errors."""


class BoundViolation(ThermoRotheError):
    def __init__(self, message: str, samples=None):
        super().__init__(message)
        self.samples = samples if samples is not None else []


class QuadratureFailure(ThermoRotheError):
    pass


class UnsupportedDomain(ThermoRotheError):
    pass


class EigenSolveFailure(ThermoRotheError):
    pass


class InvalidSpec(ThermoRotheError):
    pass


class NotCoercive(ThermoRotheError):
    pass


# the elliptic core uses the adjective form
NonCoercive = NotCoercive


class SmallnessViolated(ThermoRotheError):
    pass


class SmallnessWarning(UserWarning):
    pass


class CurrentImbalanceWarning(UserWarning):
    """Net surface current is nonzero, so no divergence-free current matches it."""


class StepTooLarge(ThermoRotheError):
    pass


class NeverHolds(ThermoRotheError):
    pass


class SingularSystem(ThermoRotheError):
    pass


class NewtonDiverged(ThermoRotheError):
    def __init__(self, message: str, last_residual: float = float("nan")):
        super().__init__(message)
        self.last_residual = last_residual


class NonConvergence(ThermoRotheError):
    """Outer fixed point did not reach tolerance; carries the best iterate."""

    def __init__(self, message: str, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class StepFailure(ThermoRotheError):
    """A time step failed; ``trajectory`` holds the steps completed so far."""

    def __init__(self, message: str, step: int, trajectory=None, cause=None):
        super().__init__(message)
        self.step = step
        self.trajectory = trajectory
        self.cause = cause


class OutOfRange(ThermoRotheError):
    pass


class EstimateViolated(ThermoRotheError):
    def __init__(self, message: str, term: str = "", report=None):
        super().__init__(message)
        self.term = term
        self.report = report


class PropertyViolated(ThermoRotheError):
    def __init__(self, message: str, counterexample=None):
        super().__init__(message)
        self.counterexample = counterexample


class ConfigError(ThermoRotheError):
    pass


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    def __init__(self, message: str, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class UnknownScenario(ConfigError):
    pass


class NonpositiveWeight(ThermoRotheError):
    pass
