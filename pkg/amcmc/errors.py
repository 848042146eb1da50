"""
Exception types raised across amcmc.

Every error derives from AmcmcError so the command line can report it as a
single machine-readable record.
"""

from typing import Any, Dict, Optional


class AmcmcError(Exception):
    """Base class for all amcmc failures."""
    pass


class DomainError(AmcmcError, ValueError):
    """Raised when an argument lies outside the domain of an operation."""
    pass


class SizeError(AmcmcError, ValueError):
    """Raised when an exact enumeration would exceed its size cap."""
    pass


class NonUniqueStationaryError(AmcmcError):
    """Raised when a finite kernel has more than one invariant measure."""
    pass


class ConstantTraceError(DomainError):
    """Raised when a trace window has zero variance."""
    pass


class ConfigError(AmcmcError):
    """Raised for unknown keys or badly typed values in an experiment config."""
    pass


class FactorizationError(AmcmcError):
    """Raised when a precision or covariance matrix fails to factorize.

    Args:
        message: What failed.
        state: Snapshot of the sampler state at the failing step.
    """

    def __init__(self, message: str, state: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.state = dict(state or {})

    def __str__(self) -> str:
        base = super().__str__()
        if not self.state:
            return base
        dump = ", ".join(f"{k}={v!r}" for k, v in self.state.items())
        return f"{base} [state: {dump}]"


class DataError(AmcmcError, ValueError):
    """Raised when an input table is unreadable, lacks a column or holds non-numeric values."""
    pass
