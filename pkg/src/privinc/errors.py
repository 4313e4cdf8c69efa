"""Exception types raised across the package."""


class PrivIncError(Exception):
    """Base class for all errors raised by privinc."""


class InvalidInput(PrivIncError, ValueError):
    pass


class Unsupported(PrivIncError):
    pass


class OutOfRange(PrivIncError, ValueError):
    pass


class StreamExhausted(PrivIncError):
    """Raised when a tree mechanism is fed more than its declared T points."""


class NumericalFailure(PrivIncError, ArithmeticError):
    pass


class DegenerateProjection(PrivIncError):
    """Raised when the random projection nearly annihilates a covariate."""


class LiftFailure(PrivIncError):
    """Raised when the gauge-minimizing lift cannot meet its residual target.

    The best point found and its residual are attached for diagnostics.
    """

    def __init__(self, message, best=None, residual=float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual
