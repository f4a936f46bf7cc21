"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DatasetError(RuntimeError):
    """Dataset layout violation (missing files, too-short videos, ...)."""


class CheckpointError(RuntimeError):
    """Unreadable, wrong-version or mismatching checkpoint."""


class OptimizerError(RuntimeError):
    """Optimizer cannot proceed (e.g. NaN gradient)."""
