"""Exception types shared across the package.

The CLI maps ``ConfigError`` and ``DataError`` to exit code 1; anything else
that escapes a subcommand is treated as an internal error.
"""


class TacoError(Exception):
    pass


class ConfigError(TacoError, ValueError):
    """Invalid or incomplete configuration (unknown key, missing font, ...)."""


class DataError(TacoError, ValueError):
    """Malformed or inconsistent data (bad labels, empty manifest, ...)."""


class InvalidSpecError(DataError):
    """A segment render request that cannot be satisfied."""


class ShapeError(TacoError, ValueError):
    """Tensor shape or divisibility violation."""


class TrainingError(TacoError, RuntimeError):
    """Training diverged (non-finite loss)."""
