"""Exception hierarchy shared by every stage of the pipeline."""


class BloomCoresetError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(BloomCoresetError, ValueError):
    """A file or byte stream does not follow the expected layout."""


class TruncationError(FormatError):
    """A matrix payload is shorter than its header declares."""


class DataError(BloomCoresetError, ValueError):
    """Embedding values violate a precondition (non-finite, zero row)."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DimError(BloomCoresetError, ValueError):
    """Embedding or signature width does not match the filter/matrix."""


class EmptyInputError(BloomCoresetError, ValueError):
    """A stage received zero rows where at least one is required."""


class EmptyCandidateError(BloomCoresetError, RuntimeError):
    """Membership screening admitted no open-set rows."""


class IoError(BloomCoresetError, OSError):
    """Reading or writing a file failed at the OS level."""
