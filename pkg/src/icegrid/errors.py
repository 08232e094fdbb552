"""Exception types shared across the package."""


class IceGridError(Exception):
    """Base class for all package-specific errors."""


class DataError(IceGridError):
    """Malformed or inconsistent input data."""


class NotPositiveDefiniteError(IceGridError):
    """A matrix that must be symmetric positive definite is not."""


class FitError(IceGridError):
    """Hyperparameter optimization failed."""


class GridError(IceGridError):
    """Posterior grid exploration exceeded its configured size cap."""


class CalibrationError(IceGridError):
    """A simulation study failed (e.g. too many replicate fits broke down)."""


class ConfigError(IceGridError):
    """Invalid run configuration; collects every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
