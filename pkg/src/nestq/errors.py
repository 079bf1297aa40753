"""Exception types shared across the codec."""


class InvalidArgument(ValueError):
    """An argument is outside the domain an operation accepts."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition (e.g. child not inside parent)."""


class UnsupportedOperation(RuntimeError):
    """The requested operation is not available for this backend."""


class ParseError(ValueError):
    """Malformed binary input. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncatedHeader(ParseError):
    """The byte budget ends before the container header does."""
