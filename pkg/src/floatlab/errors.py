"""Error taxonomy shared by the core, the service, and the CLI.

Each family maps to a distinct CLI exit code so scripted callers can tell
configuration mistakes from bad data files from numeric blow-ups.
"""


class FloatLabError(Exception):
    """Base class for all lab errors."""

    exit_code = 1
    kind = "internal"


class ConfigError(FloatLabError):
    """Invalid configuration: bad value ranges, unknown keys, unusable combinations."""

    exit_code = 2
    kind = "config"


class DataError(FloatLabError):
    """Dataset or checkpoint files that fail validation."""

    exit_code = 3
    kind = "data"


class NumericError(FloatLabError):
    """NaN/Inf or other numeric failure during a forward/backward pass."""

    exit_code = 4
    kind = "numeric"


class DimensionError(ConfigError):
    """Shape mismatch between tensors that should be compatible."""


class StateError(ConfigError):
    """Operation invoked on an object in the wrong state (e.g. unsampled noise cache)."""
