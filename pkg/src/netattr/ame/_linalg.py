"""Small dense linear-algebra helpers with explicit failure modes."""

import numpy as np

from ..errors import NumericalError

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def safe_cholesky(A, what="matrix"):
    """Lower Cholesky factor, retrying with relative diagonal jitter 1e-10 .. 1e-6."""
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return A.copy()
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} has non-finite entries")
    scale = max(float(np.mean(np.abs(np.diag(A)))), 1e-300)
    eye = np.eye(A.shape[0])
    for jit in _JITTERS:
        try:
            return np.linalg.cholesky(A + jit * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"{what} is not positive-definite")


def spd_inverse(A, what="matrix"):
    L = safe_cholesky(A, what)
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    return Linv.T @ Linv


def draw_from_precision(P, h, rng, what="precision"):
    """One draw from ``normal(P^-1 h, P^-1)``."""
    L = safe_cholesky(P, what)
    y = np.linalg.solve(L, h)
    mean = np.linalg.solve(L.T, y)
    return mean + np.linalg.solve(L.T, rng.standard_normal(P.shape[0]))


def sym(A):
    return 0.5 * (A + A.T)
