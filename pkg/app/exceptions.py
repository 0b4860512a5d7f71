"""
Exceptions Module

Error hierarchy shared by the numeric library, the service layer and the
command line. Library code raises these; only `app.main` turns them into
process exit codes.

Exit codes:
- 0: success
- 2: input error (unreadable path, malformed file, bad configuration)
- 3: data-contract violation (e.g. a candidate group without one positive)
- 4: numeric divergence (non-finite values, failed gradient check)
"""


class RecallChatError(Exception):
    """Base class for every error the application raises on purpose."""

    exit_code = 1


class InputError(RecallChatError):
    """A path could not be read or a flag value is unusable."""

    exit_code = 2


class FormatError(InputError):
    """A file does not follow its interchange format.

    Attributes:
        line (int, optional): 1-based line number of the offending record
    """

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigurationError(InputError):
    """Settings are inconsistent (dims, model kind, corpus too small)."""


class DataContractError(RecallChatError):
    """Data breaks a structural contract, such as the one-positive-per-group rule."""

    exit_code = 3

    def __init__(self, message: str, group_id: str = None):
        self.group_id = group_id
        super().__init__(message)


class NumericDomainError(RecallChatError, ArithmeticError):
    """A numeric primitive received or produced NaN/Inf."""

    exit_code = 4


class DivergenceError(NumericDomainError):
    """Training produced a non-finite loss, or a gradient check failed."""

    def __init__(self, message: str, batch_index: int = None, block: str = None):
        self.batch_index = batch_index
        self.block = block
        super().__init__(message)


class ShapeError(RecallChatError, ValueError):
    """Operand shapes disagree; the message names the offending matrix or block."""

    exit_code = 4


class InternalConsistencyError(RecallChatError):
    """Cached forward traces do not belong to the parameters given to backward."""

    exit_code = 4
