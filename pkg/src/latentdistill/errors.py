"""Exception types shared across the package.

CLI exit codes hang off the ``exit_code`` attribute: 2 for an infeasible
budget, 3 for integrity failures, 4 for bad input.
"""


class DistillError(Exception):
    exit_code = 4


class ShapeError(DistillError, ValueError):
    pass


class NumericInputError(DistillError, ValueError):
    pass


class ConvergenceError(DistillError, ArithmeticError):
    pass


class DefinitenessError(DistillError, ArithmeticError):
    pass


class PSDViolationError(DefinitenessError):
    pass


class DegenerateBandwidthError(DistillError, ValueError):
    pass


class InfeasibleSizeError(DistillError, ValueError):
    pass


class InfeasibleBudgetError(DistillError):
    exit_code = 2

    def __init__(self, message, minimal_budget_bytes=None):
        super().__init__(message)
        self.minimal_budget_bytes = minimal_budget_bytes


class FormatError(DistillError):
    """Base class for unreadable or malformed container files."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class TruncatedFileError(FormatError):
    code = "truncated"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class UnknownDtypeError(FormatError):
    code = "unknown_dtype"


class LengthMismatchError(FormatError):
    code = "length_mismatch"


class IntegrityError(FormatError):
    """Checksum or accounting mismatch in a container that otherwise parses."""

    code = "integrity"
    exit_code = 3


class CorruptionError(IntegrityError):
    code = "corrupt"
