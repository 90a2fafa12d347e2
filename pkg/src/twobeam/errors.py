"""Exception types raised across the package."""


class ParameterDomainError(ValueError):
    """A physical parameter or input lies outside its valid domain."""


class NoSolutionError(ParameterDomainError):
    """A detected rate cannot be produced by the response model."""

    def __init__(self, message, peak=None):
        super().__init__(message)
        self.peak = peak


class SubDarkRateError(ParameterDomainError):
    """A detected rate lies below the zero-illumination response."""


class SchemaError(ValueError):
    """Input data does not conform to the expected record schema."""


class FitError(RuntimeError):
    """A fit failed to converge; ``best`` holds the best parameters seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
