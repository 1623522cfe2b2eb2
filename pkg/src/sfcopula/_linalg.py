"""Shared dense linear-algebra helpers."""
from __future__ import annotations

import numpy as np
from scipy import linalg

# relative eigenvalue floor shared by the smoothing-parameter criterion and
# the posterior covariance factorization
EIG_FLOOR_REL = 1e-7


class NumericalError(RuntimeError):
    """Raised when a matrix factorization cannot be stabilized."""


def floored_eigh(B: np.ndarray, floor_rel: float = EIG_FLOOR_REL):
    """Symmetric eigendecomposition with eigenvalues floored at
    floor_rel * max(|eigenvalue|)."""
    B = 0.5 * (B + B.T)
    w, V = np.linalg.eigh(B)
    if not np.all(np.isfinite(w)):
        raise NumericalError("eigendecomposition produced non-finite eigenvalues")
    wmax = float(np.abs(w).max(initial=0.0))
    if wmax <= 0.0:
        raise NumericalError("matrix is numerically zero; cannot floor to positive definite")
    return np.maximum(w, floor_rel * wmax), V


def spd_sqrt_pair(B: np.ndarray, floor_rel: float = EIG_FLOOR_REL):
    """(B_floored, sqrt(B), sqrt(B)^-1) for a symmetric matrix."""
    w, V = floored_eigh(B, floor_rel)
    Bf = (V * w) @ V.T
    R = (V * np.sqrt(w)) @ V.T
    Rinv = (V / np.sqrt(w)) @ V.T
    return Bf, R, Rinv


def chol_precision_sampler(P: np.ndarray, floor_rel: float = EIG_FLOOR_REL):
    """Return a function z -> x with cov(x) = P^-1 given standard normal z.

    Uses a Cholesky factor of the precision when possible; falls back to an
    eigenvalue-floored factorization (with a warning) otherwise.
    """
    import warnings

    P = 0.5 * (P + P.T)
    try:
        C = linalg.cholesky(P, lower=False)  # P = C' C with C upper

        def sample(z):
            return linalg.solve_triangular(C, z.T, lower=False).T

        return sample
    except linalg.LinAlgError:
        warnings.warn("precision matrix not positive definite; flooring eigenvalues")
        w, V = floored_eigh(P, floor_rel)

        def sample(z):
            return (z / np.sqrt(w)) @ V.T

        return sample
