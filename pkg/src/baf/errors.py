"""Error taxonomy shared across the package.

Every error carries a short machine-readable category so the CLI can map
failures to stable exit codes.
"""


class BafError(Exception):
    """Base class for all package errors."""

    category = "error"
    exit_code = 1


class ConfigError(BafError):
    """Invalid or inconsistent configuration."""

    category = "config"
    exit_code = 2


class InputError(BafError):
    """Missing or unreadable input (files, stages run out of order)."""

    category = "input"
    exit_code = 3


class FormatError(BafError):
    """Unknown magic, version mismatch, or truncated artifact."""

    category = "format"
    exit_code = 4


class DataError(BafError):
    """Data violates a documented invariant (non-finite values, bad dims, ...)."""

    category = "data"
    exit_code = 5


class TrainingError(BafError):
    """Optimization diverged or preconditions for training are unmet."""

    category = "training"
    exit_code = 6
