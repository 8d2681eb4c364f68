"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Malformed arguments: wrong shapes, non-finite values, bad parameters."""


class UnsupportedCombinationError(ValueError):
    """A penalty/regularizer pairing or operator variant that is not available."""


class ConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    ``best`` holds the best iterate found and ``residual`` the remaining
    optimality residual, so callers can decide whether to use it anyway.
    """

    def __init__(self, message, best=None, residual=float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class DivergenceError(RuntimeError):
    """Gradient play blew up; usually fixed by a smaller step size."""


class SchemaError(ValueError):
    """A file did not match the expected structure or schema version."""
