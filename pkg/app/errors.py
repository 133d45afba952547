"""Exception hierarchy shared by the library and the CLI.

Library code raises these; only the CLI entry point turns them into
process exit codes (``exit_code`` on each class).
"""


class LabError(Exception):
    """Base class for every refusal raised by the lab."""

    exit_code: int = 2


class SchemaError(LabError):
    """Problem spec JSON is malformed or does not match the schema."""

    exit_code = 1


class PreconditionError(LabError):
    """An operation was called outside its precondition."""

    exit_code = 2


class DomainError(PreconditionError, ValueError):
    """Argument outside the domain of a function (e.g. x not in [0, 1])."""


class SupportError(PreconditionError):
    """A control is nonzero outside the control region."""


class CacheError(PreconditionError):
    """Cached artifact has the wrong version stamp or is corrupted."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (offset {offset})")
        self.offset = offset


class NumericalRefusal(LabError):
    """Computation refused because the numbers cannot be trusted.

    Raised for ill-conditioned Gramians, fits over infinite ratios,
    unreachable tolerances and residuals above tolerance.
    """

    exit_code = 3
