"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input, schema, or precondition violation."""


class EstimationError(RuntimeError):
    """Numerical failure during fitting (singular systems, empty arms, ...)."""
