"""Exception types that map onto the CLI exit codes.

Exit code contract: 0 success, 1 configuration error, 2 data/parse error,
3 numeric failure. Plain ``ValueError`` is reserved for programming errors
(invalid arguments to library functions) and is not translated by the CLI.
"""


class ShiftCPError(Exception):
    """Base class for errors the CLI translates into exit codes."""

    exit_code = 1


class ConfigError(ShiftCPError):
    """Contradictory or malformed run configuration."""

    exit_code = 1


class DataFormatError(ShiftCPError):
    """Malformed input data (logit tables, dataset files, checkpoints)."""

    exit_code = 2


class NumericError(ShiftCPError):
    """Numeric failure at run time (divergence, non-finite results)."""

    exit_code = 3
