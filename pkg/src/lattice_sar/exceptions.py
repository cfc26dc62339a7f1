class ConstraintError(ValueError):
    """A weight vector or matrix violates nonnegativity or the row-sum bound."""


class NumericalError(ArithmeticError):
    """A linear solve or decomposition failed or was inaccurate."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConvergenceError(RuntimeError):
    """Coordinate descent hit its sweep limit.

    Carries the last iterate and its KKT residual so callers can decide
    whether it is usable.
    """

    def __init__(self, message: str, coef=None, kkt_violation: float = float("nan")):
        super().__init__(message)
        self.coef = coef
        self.kkt_violation = kkt_violation


class CapabilityError(RuntimeError):
    """Problem too large for the dense maximum-likelihood baseline."""
