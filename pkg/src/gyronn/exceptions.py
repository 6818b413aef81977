"""Exception hierarchy shared by every gyronn module."""


class GyroError(Exception):
    """Base class for all errors raised by gyronn."""


class DomainError(GyroError, ValueError):
    """A matrix function was evaluated outside of its domain."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class NotPositiveDefiniteError(DomainError):
    """Cholesky factorization met a non-positive pivot."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class RankError(GyroError, ValueError):
    """Input does not have the required (column) rank."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(GyroError, RuntimeError):
    """An iterative routine did not converge within its budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CutLocusError(GyroError, ValueError):
    """A Grassmann logarithm was requested at (or too near) the cut locus."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DegenerateHyperplaneError(GyroError, ValueError):
    """A hypergyroplane has a vanishing normal."""


class ConditioningError(GyroError, ArithmeticError):
    """A backward pass would divide by a (near) zero spectral gap."""


class UnsupportedOpError(GyroError, TypeError):
    """An operation cannot be recorded on the autodiff tape."""


class EvaluationError(GyroError, ArithmeticError):
    """A function returned a non-finite value during a numerical check."""


class AlignmentError(GyroError, ValueError):
    """Two subspaces cannot be aligned (principal angle of pi/2)."""


class ParseError(GyroError, ValueError):
    """A text file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(GyroError, ValueError):
    """A run configuration failed validation."""
