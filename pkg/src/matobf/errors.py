"""Exception types shared across the package."""


class MatobfError(Exception):
    """Base class for all package errors."""


class FormatError(MatobfError, ValueError):
    """A file does not follow the expected binary layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(MatobfError, ValueError):
    """Invalid parameters or an inconsistent configuration."""


class DomainError(MatobfError, ValueError):
    """Inputs outside an operation's mathematical domain (shape mismatch, NaN, ...)."""


class DegenerateVarianceError(ConfigError):
    """The fitting data has no variance along a requested direction."""
