"""Evaluated bases, quadratic penalties, and constraint transforms.

Every smooth term of an additive predictor reduces to a DesignBlock: an
evaluated basis matrix, a positive semidefinite penalty, and optional
transforms (shape constraint, identifiability centering).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Raw shape-constrained coefficients above this bound make exp() useless as a
# step; the likelihood treats such points as divergent.
SC_RAW_BOUND = 25.0


@dataclass(frozen=True)
class KnotGrid:
    """Strictly increasing knots plus spline degree.

    ``knots`` cover the data range; the basis is built on an extension by
    ``degree`` extra knots on each side (boundary spacing repeated), giving
    ``len(knots) + degree - 1`` basis functions supported on the range.
    """

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("need at least two knots")
        if not np.all(np.diff(knots) > 0):
            raise ValueError("knots must be strictly increasing")
        if self.degree < 0:
            raise ValueError("degree must be a nonnegative integer")

    @classmethod
    def equidistant(cls, lo: float, hi: float, n_knots: int = 10, degree: int = 3) -> "KnotGrid":
        if not hi > lo:
            raise ValueError(f"empty knot range [{lo}, {hi}]")
        if n_knots < 2:
            raise ValueError("need at least two knots")
        return cls(np.linspace(lo, hi, n_knots), degree)

    @property
    def lo(self) -> float:
        return float(self.knots[0])

    @property
    def hi(self) -> float:
        return float(self.knots[-1])

    @property
    def n_basis(self) -> int:
        return self.knots.size + self.degree - 1

    def extended_knots(self) -> np.ndarray:
        l = self.degree
        if l == 0:
            return self.knots
        left = self.knots[0] - (self.knots[1] - self.knots[0]) * np.arange(l, 0, -1)
        right = self.knots[-1] + (self.knots[-1] - self.knots[-2]) * np.arange(1, l + 1)
        return np.concatenate([left, self.knots, right])

    def check_range(self, x: np.ndarray, context: str = "x"):
        x = np.asarray(x, dtype=float)
        bad = (x < self.lo) | (x > self.hi) | ~np.isfinite(x)
        if np.any(bad):
            raise ValueError(
                f"{context} outside knot range [{self.lo:g}, {self.hi:g}]: "
                f"{np.count_nonzero(bad)} value(s), first offender {x[bad][0]!r}"
            )


def bspline_design(x, grid: KnotGrid) -> np.ndarray:
    """Evaluate all B-spline basis functions at the points ``x``.

    Cox-de Boor recursion on the extended knot vector; returns an
    ``(len(x), grid.n_basis)`` matrix. Points outside the knot range raise
    (no extrapolation).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid.check_range(x)
    t = grid.extended_knots()
    l = grid.degree
    # degree-0 seed: half-open intervals, points at the upper boundary fall
    # into the last interval of the visible range
    idx = np.searchsorted(t, x, side="right") - 1
    idx = np.minimum(idx, l + grid.knots.size - 2)
    B = np.zeros((x.size, t.size - 1))
    B[np.arange(x.size), idx] = 1.0
    for d in range(1, l + 1):
        nb = t.size - d - 1
        left = (x[:, None] - t[None, :nb]) / (t[d:d + nb] - t[:nb])[None, :]
        right = (t[None, d + 1:d + 1 + nb] - x[:, None]) / (t[d + 1:d + 1 + nb] - t[1:nb + 1])[None, :]
        B = left * B[:, :nb] + right * B[:, 1:nb + 1]
    return B


def bspline_basis(x: float, grid: KnotGrid) -> np.ndarray:
    """Basis function values at a single point (vector of length n_basis)."""
    return bspline_design(np.asarray([x]), grid)[0]


def difference_penalty(Q: int, d: int = 2) -> np.ndarray:
    """Quadratic penalty P'P from the d-th order difference matrix P."""
    if d < 1 or Q <= d:
        raise ValueError(f"need Q > d >= 1, got Q={Q}, d={d}")
    P = np.diff(np.eye(Q), n=d, axis=0)
    return P.T @ P


def sc_transform_matrix(Q: int) -> np.ndarray:
    """Coefficient transform enforcing a nondecreasing concave fit.

    Row 1 is the first unit vector, column 1 is all ones, and the remaining
    entries are min(i-1, Q-k+1) in 1-based (row i, column k) indexing. With
    positive inner coefficients the transformed coefficient sequence has
    positive, decreasing increments.
    """
    if Q < 4:
        raise ValueError("shape-constrained transform needs Q >= 4")
    i = np.arange(Q)[:, None]
    k = np.arange(Q)[None, :]
    sigma = np.minimum(i, Q - k).astype(float)
    sigma[:, 0] = 1.0
    sigma[0, 1:] = 0.0
    return sigma


def sc_coefficients(raw, bound: float = SC_RAW_BOUND) -> np.ndarray:
    """Effective spline coefficients Sigma @ (raw_1, exp(raw_2), ...).

    Raw entries beyond ``bound`` signal a diverging step and raise.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size < 4:
        raise ValueError("raw coefficient vector must have length >= 4")
    if np.any(raw[1:] > bound):
        raise ValueError(f"raw shape-constrained coefficients exceed bound {bound:g}")
    tilde = np.concatenate([raw[:1], np.exp(raw[1:])])
    return sc_transform_matrix(raw.size) @ tilde


def sc_penalty(Q: int) -> np.ndarray:
    """Banded difference matrix penalizing raw shape-constrained coefficients.

    +1 at (i, i+2) and -1 at (i, i+3) for i = 1..Q-3 (1-based); the quadratic
    form is applied as P'P.
    """
    if Q < 4:
        raise ValueError("shape-constrained penalty needs Q >= 4")
    P = np.zeros((Q, Q))
    rows = np.arange(Q - 3)
    P[rows, rows + 2] = 1.0
    P[rows, rows + 3] = -1.0
    return P


@dataclass
class DesignBlock:
    """One smooth term: evaluated basis, penalty, and transform state."""

    Z: np.ndarray
    D: np.ndarray
    transform: str = "identity"  # "identity" | "sc_monotone_concave"
    Sigma: np.ndarray | None = None
    centered: bool = False
    center_T: np.ndarray | None = None  # reparameterization, linear blocks
    center_means: np.ndarray | None = None  # subtracted column means, sc blocks

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        if self.Z.ndim != 2:
            raise ValueError("Z must be a matrix")
        if self.D.shape != (self.Z.shape[1], self.Z.shape[1]):
            raise ValueError("penalty shape does not match design columns")
        if not np.allclose(self.D, self.D.T, atol=1e-10):
            raise ValueError("penalty must be symmetric")

    @property
    def n_coef(self) -> int:
        return self.Z.shape[1]


def random_effect_design(group_ids) -> DesignBlock:
    """Indicator design for iid group intercepts with a ridge penalty.

    ``group_ids`` must be dense 1..G with every group present.
    """
    ids = np.asarray(group_ids)
    if ids.size == 0:
        raise ValueError("no observations")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError("group ids must be integers")
    G = int(ids.max())
    present = np.unique(ids)
    if ids.min() < 1 or present.size != G:
        missing = sorted(set(range(1, G + 1)) - set(present.tolist()))
        raise ValueError(f"group ids must be dense 1..G; empty groups {missing}")
    Z = np.zeros((ids.size, G))
    Z[np.arange(ids.size), ids - 1] = 1.0
    return DesignBlock(Z=Z, D=np.eye(G))


def _nullspace_of_vector(c: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the hyperplane {b : c'b = 0} via a Householder
    reflector (deterministic, no SVD)."""
    c = np.asarray(c, dtype=float)
    Q = c.size
    nrm = np.linalg.norm(c)
    if nrm == 0.0:
        return np.eye(Q)
    v = c.copy()
    v[0] += np.copysign(nrm, c[0] if c[0] != 0 else 1.0)
    H = np.eye(Q) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def center_block(block: DesignBlock) -> DesignBlock:
    """Reparameterize a linear block onto the sum-to-zero constraint space.

    The returned block has one fewer column, exactly zero column sums, and a
    penalty transformed so the quadratic form is preserved.
    """
    if block.centered:
        raise ValueError("block is already centered")
    if block.transform != "identity":
        raise ValueError("reparameterized centering applies to identity blocks only")
    T = _nullspace_of_vector(block.Z.sum(axis=0))
    Zc = block.Z @ T
    Dc = T.T @ block.D @ T
    Dc = 0.5 * (Dc + Dc.T)
    return replace(block, Z=Zc, D=Dc, centered=True, center_T=T)
