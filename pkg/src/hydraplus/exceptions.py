"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid hyperparameter, schedule or experiment configuration."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ValueError):
    """An input violates a numeric precondition (e.g. non-positive variance)."""


class TrainingError(RuntimeError):
    """Training diverged (NaN/Inf loss or gradient)."""
