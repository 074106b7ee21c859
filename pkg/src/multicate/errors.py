"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or contract-violating input data."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (rank deficiency, non-convergence)."""

    def __init__(self, message, best_iterate=None):
        super().__init__(message)
        self.best_iterate = best_iterate
