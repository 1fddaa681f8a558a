"""Exception types."""


class DomainError(ValueError):
    """Input outside the domain of a model operation."""


class NoRealMatch(DomainError):
    """Moment matching has no real-valued solution."""


class ConvergenceError(RuntimeError):
    """No optimizer start converged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class DataError(ValueError):
    """Malformed or invalid input data."""
