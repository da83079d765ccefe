"""Dense small-matrix routines backing the aggregation protocol.

Everything here operates on symmetric matrices of size d x d with d around
ten or less, so plain eigendecompositions are used throughout.  The rank
cutoff is relative (scaled by the largest eigenvalue magnitude) because the
protocol repeatedly inverts Gram matrices whose scale varies by orders of
magnitude across phases.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NonFiniteError, NotPSDError

# Relative eigenvalue cutoff: eps = d * max|eig| * RANK_CUTOFF_SCALE.
RANK_CUTOFF_SCALE = 1e-12

# Quadratic forms down to this value are treated as zero (round-off).
NEG_QUADFORM_TOL = -1e-12


def _as_square(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


def _as_vector(z, name: str = "vector") -> np.ndarray:
    v = np.asarray(z, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return v


def eigen_cutoff(eigvals: np.ndarray) -> float:
    """Rank cutoff for a set of eigenvalues of one symmetric matrix."""
    w = np.asarray(eigvals, dtype=float)
    if w.size == 0:
        return 0.0
    return w.size * float(np.max(np.abs(w))) * RANK_CUTOFF_SCALE


def _eigh_sym(m: np.ndarray):
    # Symmetrize first so accumulated round-off cannot leak into eigh.
    sym = 0.5 * (m + m.T)
    return np.linalg.eigh(sym)


def pinv(m) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric matrix.

    Eigenvalues with magnitude at or below the relative cutoff are treated
    as exact zeros.
    """
    a = _as_square(m)
    w, u = _eigh_sym(a)
    cut = eigen_cutoff(w)
    inv_w = np.where(np.abs(w) > cut, np.divide(1.0, w, where=np.abs(w) > cut), 0.0)
    return (u * inv_w) @ u.T


def rank(m) -> int:
    """Number of eigenvalues above the relative cutoff (by magnitude)."""
    a = _as_square(m)
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    return int(np.sum(np.abs(w) > eigen_cutoff(w)))


def log_det_on_range(m) -> float:
    """Log pseudo-determinant: sum of log eigenvalues above the cutoff.

    The empty sum (zero matrix) is 0.0 by convention.
    """
    a = _as_square(m)
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    kept = w[w > eigen_cutoff(w)]
    if kept.size == 0:
        return 0.0
    return float(np.sum(np.log(kept)))


def weighted_norm(z, v) -> float:
    """Matrix-weighted vector norm sqrt(z' V z) for symmetric PSD V.

    Tiny negative quadratic forms (>= NEG_QUADFORM_TOL) are clamped to
    zero; anything more negative raises NotPSDError.
    """
    zv = _as_vector(z)
    a = _as_square(v, "weight matrix")
    if a.shape[0] != zv.shape[0]:
        raise DimensionError(
            f"vector of length {zv.shape[0]} incompatible with "
            f"{a.shape[0]}x{a.shape[1]} weight matrix"
        )
    q = float(zv @ (0.5 * (a + a.T)) @ zv)
    if q < NEG_QUADFORM_TOL:
        raise NotPSDError(f"quadratic form {q} is negative beyond tolerance")
    return float(np.sqrt(max(q, 0.0)))
