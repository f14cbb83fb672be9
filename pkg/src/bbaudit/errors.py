"""Exception hierarchy shared by every stage of an audit."""

from __future__ import annotations


class AuditError(Exception):
    """Base class for all errors raised by bbaudit."""


class SchemaError(AuditError, ValueError):
    """An input does not conform to a model's declared schema."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TransportError(AuditError):
    """A remote model could not be reached. Safe to retry."""

    retryable = True


class ProtocolError(AuditError):
    """A remote endpoint answered with a malformed or unexpected body."""

    retryable = False


class NonConformantOutput(AuditError):
    """A model returned a value outside its declared output space."""

    def __init__(self, message: str, bad: dict[int, object], outputs: list | None = None):
        super().__init__(message)
        #: position in the batch -> offending raw value
        self.bad = bad
        #: the full batch as returned, so conformant outputs are not lost
        self.outputs = outputs


class BudgetExceeded(AuditError):
    """A query plan needs more queries than the budget admits."""


class EstimationError(AuditError, ValueError):
    """The evidence cannot support the requested estimate."""


class InsufficientEvidence(AuditError):
    """The audit outcome is withheld; more evidence is needed.

    ``recommended_n`` carries the per-group sample size that would make the
    configured test meaningful, when one can be computed.
    """

    def __init__(self, message: str, recommended_n: int | None = None):
        super().__init__(message)
        self.recommended_n = recommended_n


class ConfigError(AuditError, ValueError):
    """A configuration value is missing, malformed, or out of range."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class MethodNotApplicable(AuditError, ValueError):
    """The chosen test cannot be used on this data shape; another method is named."""
