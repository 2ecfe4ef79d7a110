"""Exception hierarchy shared by all modules."""


class LiquidationError(Exception):
    """Base class for errors raised by this package."""


class DomainError(LiquidationError, ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class AdmissibilityError(DomainError):
    """A model violates a standing assumption (drift sign, moment conditions, position size)."""


class DegeneracyError(LiquidationError, ValueError):
    """A model is trivial or a derived parameter degenerates."""


class QuadratureError(LiquidationError, ArithmeticError):
    """A quadrature failed to reach its tolerance within the refinement cap."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DivergenceError(LiquidationError, ArithmeticError):
    """The liquidation-time integral could not be classified as finite or infinite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class InvariantError(LiquidationError, RuntimeError):
    """An internal invariant (e.g. monotone trajectory) was breached."""
