"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MultibetheError(Exception):
    """Base class for all errors raised by the package."""


class SpecError(MultibetheError, ValueError):
    """Malformed or inconsistent model input (dimensions, keys, signs)."""


class FeasibilityError(MultibetheError):
    """The requested instance violates one of the feasibility conditions."""


class SamplingError(MultibetheError):
    """Random graph sampling failed after the retry budget.

    ``diagnostics`` carries per-attempt information (block, remaining defects).
    """

    def __init__(self, message: str, diagnostics: list[dict] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class RegimeError(MultibetheError):
    """Solver called outside the parameter regime it is valid for."""

    def __init__(self, message: str, reason: str = "regime"):
        super().__init__(message)
        self.reason = reason


class CriticalPointError(RegimeError):
    """rho(M) lies inside the critical window where no statement is made."""

    def __init__(self, message: str, rho: float):
        super().__init__(message, reason="critical")
        self.rho = rho


class StructuralError(MultibetheError, ValueError):
    """Index mismatch or a structural property (e.g. irreducibility) missing."""


class NumericError(MultibetheError, ArithmeticError):
    """A numerical routine failed to converge.

    ``traces`` maps estimator name to the sequence of iterates it produced.
    """

    def __init__(self, message: str, traces: dict | None = None):
        super().__init__(message)
        self.traces = traces or {}


class SizeError(MultibetheError, ValueError):
    """Problem too large for an exact routine."""
