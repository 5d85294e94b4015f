"""Exception types shared across the toolkit."""


class SchemaError(ValueError):
    """A file or mapping is missing required keys or carries unknown ones."""


class DimensionError(ValueError):
    """Array shapes or lengths are inconsistent."""


class ValidationError(ValueError):
    """Values violate a documented invariant (non-finite, bad norm, ...)."""


class CheckpointError(ValueError):
    """A policy checkpoint is malformed, truncated, or of an unknown version."""


class ConfigError(ValueError):
    """A run configuration is inconsistent with the data or environment."""


class NumericalBlowupError(RuntimeError):
    """Simulation state became non-finite; the episode cannot continue."""
