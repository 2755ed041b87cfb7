"""Symmetric positive-definite solves with a guarded Cholesky factorization.

All Gaussian-posterior and MAP linear systems in this package are symmetric
positive definite by construction, so they are factored with Cholesky. When
rounding makes a factorization fail, a small diagonal jitter proportional to
the mean diagonal magnitude is added and escalated a bounded number of times
before giving up with a :class:`~sparsemodal.errors.NumericalError`.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NumericalError

# First jitter is 1e-12 * trace/n; each escalation multiplies by 100.
_JITTER_REL = 1e-12
_JITTER_GROWTH = 100.0
_MAX_ESCALATIONS = 3


class SpdFactor:
    """Cholesky factor of an SPD matrix with solve/logdet helpers."""

    def __init__(self, lower: np.ndarray, jitter: float):
        self._lower = lower
        self.jitter = jitter

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve((self._lower, True), rhs)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._lower))))

    def inverse(self) -> np.ndarray:
        n = self._lower.shape[0]
        inv = self.solve(np.eye(n))
        return 0.5 * (inv + inv.T)


def spd_factor(matrix: np.ndarray) -> SpdFactor:
    """Factor a symmetric positive-definite matrix, with jitter fallback.

    Raises
    ------
    NumericalError
        If the matrix is still not factorizable after the bounded jitter
        escalation; the message includes a condition-number estimate.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        return SpdFactor(np.empty((0, 0)), 0.0)
    a = 0.5 * (a + a.T)
    scale = float(np.trace(a)) / a.shape[0]
    if scale <= 0.0:
        scale = 1.0
    jitter = 0.0
    for attempt in range(_MAX_ESCALATIONS + 1):
        try:
            lower = scipy.linalg.cholesky(a + jitter * np.eye(a.shape[0]), lower=True)
            return SpdFactor(lower, jitter)
        except scipy.linalg.LinAlgError:
            jitter = _JITTER_REL * scale * (_JITTER_GROWTH ** attempt)
    cond = float(np.linalg.cond(a))
    raise NumericalError(
        f"matrix is not positive definite after {_MAX_ESCALATIONS} jitter "
        f"escalations (condition estimate {cond:.3e})"
    )


def spd_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return spd_factor(matrix).solve(rhs)


def spd_logdet(matrix: np.ndarray) -> float:
    return spd_factor(matrix).logdet()
