"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration. Carries the full list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


class AssumptionError(ValueError):
    """A structural assumption on the input data does not hold."""


class CompatibilityError(ValueError):
    """Inputs are mutually inconsistent (shape, grid, or compatibility condition)."""


class NumericalError(RuntimeError):
    """A numerical invariant broke down at runtime (NaN/Inf, failed solve)."""
