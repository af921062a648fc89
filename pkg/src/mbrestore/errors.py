"""Exception types shared across the package and mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad command-line flags or a malformed/unknown configuration entry."""


class ConfigurationError(ValueError):
    """Model wiring problem: shape/channel mismatch or an invalid call."""


class DataError(Exception):
    """Missing, empty, or unreadable input data."""


class TrainingDiverged(RuntimeError):
    """Aborted on a non-finite training loss."""
