"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (shape, range, finiteness)."""


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a trustworthy result."""


class ConvergenceError(NumericalError):
    """An iterative solver exhausted its budget before reaching tolerance.

    Carries the final violation magnitude so callers can judge how far off
    the returned state is.
    """

    def __init__(self, message, violation):
        super().__init__(f"{message} (final violation {violation:.3e})")
        self.violation = float(violation)


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. zero-norm reference)."""


class ConfigError(ValueError):
    """A run configuration field is out of range or inconsistent."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field
