"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit codes: input/validation problems
(exit code 1) and numerical failures discovered mid-computation (exit code 2).
"""


class ValidationError(Exception):
    """Bad inputs: malformed files, inconsistent shapes, unknown names."""


class NumericalError(Exception):
    """A computation could not be completed to the requested accuracy."""


class NearSingularF(NumericalError):
    """Observation predictive covariance is singular or near singular."""


class SingularMoment(NumericalError):
    """A predictive second-moment matrix is not invertible."""


class SingularB(NumericalError):
    """A price-sensitivity matrix along the lookahead is not invertible."""


class NoConvergence(NumericalError):
    """A fixed-point iteration did not reach tolerance within its budget."""


class ZeroBeta(NumericalError):
    """Scalar price sensitivity of exactly zero cannot be inverted."""


class DegenerateDenominator(NumericalError):
    """Observed demand too close to target to back out a step size."""


class MonotonicityViolation(NumericalError):
    """EM log-likelihood decreased; indicates an implementation bug."""


class EmptyTrajectory(ValidationError):
    """No usable block records."""


class SeriesTooShort(ValidationError):
    """Series shorter than the smoothing window."""


class ParseError(ValidationError):
    """Malformed CSV content; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MonotonicityError(ValidationError):
    """Block numbers not strictly increasing."""


class NonStationaryUpdateWarning(UserWarning):
    """Fitted transition matrix was projected back inside the unit circle."""
