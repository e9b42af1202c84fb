"""Exception types shared across the package."""


class DisorderError(Exception):
    """Base class for all package errors."""


class InvalidModelError(DisorderError):
    """A model failed validation; carries the diagnostic list."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


class UnreachableObservationError(DisorderError):
    """An observed transition has zero probability under both kernels."""


class ConvergenceError(DisorderError):
    """Value iteration did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CapacityError(DisorderError):
    """A table or enumeration would exceed the configured size guard."""
