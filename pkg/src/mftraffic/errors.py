"""Exception types raised across the solver."""


class MFTrafficError(Exception):
    """Base class for all solver errors."""


class ValidationError(MFTrafficError, ValueError):
    """An input violates a modelling rule. The message names the rule."""

    rule = "validation"

    def __init__(self, message: str, rule: str | None = None):
        if rule is not None:
            self.rule = rule
        super().__init__(f"[{self.rule}] {message}")


class NegativeThroughput(ValidationError):
    rule = "throughput_nonnegative"


class RateViolation(ValidationError):
    rule = "throughput_rate"


class NonPositiveGeometry(ValidationError):
    rule = "positive_geometry"


class NegativePreference(ValidationError):
    rule = "preference_nonnegative"


class InvalidDecision(ValidationError):
    rule = "decision_consistent"


class OutOfRange(ValidationError):
    rule = "integration_range"


class StepTooSmall(ValidationError):
    rule = "epsilon_step"


class NonFiniteState(MFTrafficError, ArithmeticError):
    """An ODE state became inf or nan."""


class MassOverflow(MFTrafficError):
    """A link mass exceeded rho_max; the scenario is infeasible."""


class NoConvergedCandidate(MFTrafficError):
    """Every inner equilibrium solve of a bi-level search failed."""


class ParseError(MFTrafficError):
    """The scenario document is not well-formed JSON."""


class SchemaError(MFTrafficError):
    """A required key is missing or an unknown key is present."""
