"""Exception types shared across the package."""


class DistinctLocationsError(ValueError):
    """Two sample locations coincide, so the Gram matrix is singular."""


class IllConditionedError(ArithmeticError):
    """Cholesky factorization hit a non-positive or non-finite pivot."""

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        super().__init__(message or f"ill-conditioned system: pivot {pivot} is not positive")


class DenseSaturationError(RuntimeError):
    """Fewer unsaturated samples than the regression window needs."""

    def __init__(self, available, required):
        self.available = available
        self.required = required
        super().__init__(
            f"saturation too dense: {available} unsaturated samples, window needs {required}"
        )


class IllConditionedWindowWarning(RuntimeWarning):
    pass
