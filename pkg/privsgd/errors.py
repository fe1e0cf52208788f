"""Exception hierarchy. `exit_code` is what the CLI returns for each class."""

from typing import Any, Optional


class PrivSGDError(Exception):
    exit_code = 1


class ConfigurationError(PrivSGDError, ValueError):
    """Bad inputs: dimension mismatch, invalid spec field, bad flag."""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None) -> None:
        super().__init__(message)
        self.field = field


class DomainError(PrivSGDError, ValueError):
    """Accountant input outside its mathematical domain."""
    exit_code = 3


class PreconditionError(DomainError):
    """A regime restriction of a guarantee does not hold."""

    def __init__(self, message: str, inequality: str = "") -> None:
        super().__init__(message)
        self.inequality = inequality


class SamplerIndexError(PrivSGDError, IndexError):
    pass


class StepBudgetExceeded(PrivSGDError, RuntimeError):
    """max_steps reached before the stopping guard fired."""
    exit_code = 5

    def __init__(self, message: str, partial_trace: Any = None) -> None:
        super().__init__(message)
        self.partial_trace = partial_trace


EXIT_OK = 0
EXIT_AUDIT_VIOLATION = 4
