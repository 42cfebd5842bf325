"""Exception taxonomy shared across the toolkit.

The CLI maps each category to a distinct exit code; library code raises the
narrowest type that applies.
"""


class SatfusionError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SatfusionError):
    """Invalid or inconsistent configuration values."""


class DataError(SatfusionError):
    """Malformed corpus data, unsatisfiable dataset preconditions."""


class ArtifactError(SatfusionError):
    """A required on-disk artifact is missing or unreadable."""


class CheckpointError(SatfusionError):
    """Checkpoint file is corrupted, incompatible, or fails integrity checks."""
