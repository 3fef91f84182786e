"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to; I/O failures
are left to the builtin OSError family (exit code 4).
"""


class AxdseError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(AxdseError):
    """Bad arguments or violated preconditions (exit code 2)."""

    exit_code = 2


class ValidationError(AxdseError):
    """Data fails a structural or numeric invariant (exit code 3)."""

    exit_code = 3


class ManifestError(ValidationError):
    """A manifest file is malformed; the message names the offending field."""
