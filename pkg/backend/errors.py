"""Exception hierarchy shared by every module.

Configuration errors describe bad input (wrong shapes, invalid flags, malformed
files). Numeric errors describe inputs that are well formed but numerically
out of reach (overflow, singular statistics). The CLI maps the two branches to
exit codes 2 and 3, the HTTP app to status codes 400 and 422.
"""

from typing import Optional


class FavorError(Exception):
    """Base class for all library errors"""

    exit_code: int = 1
    status_code: int = 500


class ConfigurationError(FavorError, ValueError):
    exit_code = 2
    status_code = 400


class NumericError(FavorError, ArithmeticError):
    exit_code = 3
    status_code = 422


# Configuration errors


class InvalidArgument(ConfigurationError):
    pass


class DimensionMismatch(ConfigurationError):
    pass


class AsymmetricInput(ConfigurationError):
    pass


class MissingPhase(ConfigurationError):
    pass


class UnsupportedFamily(ConfigurationError):
    pass


class TrigUnsupported(UnsupportedFamily):
    pass


class SchemeMismatch(ConfigurationError):
    pass


class InvalidCorrelation(ConfigurationError):
    pass


class InvalidParameters(ConfigurationError):
    pass


class MissingLabelColumn(ConfigurationError):
    pass


class TooSmall(ConfigurationError):
    pass


class ParseError(ConfigurationError):
    """Malformed cell in a CSV file"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row  # 1-based data row (header excluded)
        self.column = column


# Numeric errors


class NoConvergence(NumericError):
    pass


class NumericOverflow(NumericError):
    pass


class NegativePhi(NumericError):
    pass


class DegenerateCoordinate(NumericError):
    pass


class SingularMoments(NumericError):
    pass


class DegenerateSigma(NumericError):
    pass


class NonPsdMatrix(NumericError):
    pass


class SingularTransform(NumericError):
    pass


class DegenerateDenominator(NumericError):
    pass


class ConstraintViolation(NumericError):
    pass
