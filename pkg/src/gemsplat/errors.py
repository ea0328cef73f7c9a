"""Exception types shared across the package."""


class GemError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GemError, ValueError):
    """Input data violates a documented precondition."""


class ContractViolationError(GemError, RuntimeError):
    """Caller broke an API contract (mismatched state, wrong shapes)."""


class RankDeficiencyError(GemError, ValueError):
    """A basis that must be full-rank is not."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FormatError(GemError, ValueError):
    """A serialized payload could not be parsed."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass
