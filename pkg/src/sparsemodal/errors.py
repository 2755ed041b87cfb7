"""Exception types shared across the package.

Plain ``ValueError`` is used for simple argument/dimension violations; the
classes here exist where callers (in particular the CLI) need to distinguish
input problems (exit code 1) from numerical/convergence problems (exit 2).
"""

from __future__ import annotations


class FormatError(ValueError):
    """A document failed schema validation.

    Carries the path of the offending field (e.g. ``"freq_sq[2][1]"``) so
    error messages can point at the exact location in the file.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateDataError(ValueError):
    """Data is technically valid but makes an estimate unbounded or undefined
    (e.g. an exactly-zero residual driving a precision estimate to infinity)."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed beyond recovery (e.g. a matrix that
    should be positive definite is not, even after jitter escalation)."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration budget without meeting the
    convergence criterion. The per-iteration trace is attached for debugging."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
