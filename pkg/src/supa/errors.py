"""Exception types shared across the package.

The CLI maps each class to its own exit status.
"""


class SupaError(Exception):
    exit_code = 1


class ConfigError(SupaError, ValueError):
    """Bad type names, schemas, hyperparameters or missing input files."""

    exit_code = 2


class DataError(SupaError, ValueError):
    """Malformed edge files or inconsistent node typing."""

    exit_code = 3


class TrainingError(SupaError, RuntimeError):
    """Non-finite loss or gradient while training on an edge."""

    exit_code = 4
