"""Hermitian linear-algebra helpers shared across the solver stack.

No explicit matrix inverse is formed anywhere: positive definite systems go
through a Cholesky factorization, and log-determinants are read off the
Cholesky factor.
"""

import numpy as np
import scipy.linalg


def hermitianize(a: np.ndarray) -> np.ndarray:
    """Average ``a`` with its conjugate transpose (last two axes)."""
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def solve_hpd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for Hermitian positive definite ``a``.

    Raises ``numpy.linalg.LinAlgError`` if the Cholesky factorization fails,
    which callers use to detect (numerically) singular systems.
    """
    c = scipy.linalg.cho_factor(a, lower=True)
    return scipy.linalg.cho_solve(c, b)


def lndet_hpd(a: np.ndarray) -> float:
    """Natural-log determinant of a Hermitian positive definite matrix."""
    chol = np.linalg.cholesky(a)
    return 2.0 * float(np.sum(np.log(np.real(np.diagonal(chol)))))
