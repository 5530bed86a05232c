"""Dense matrix helpers and the Moore-Penrose pseudoinverse.

Matrices are plain float64 numpy arrays (row-major); vectors are 1-D arrays.
"""

import numpy as np

from .errors import InvalidInputError, ShapeError

# Singular values below RCOND * sigma_max are treated as zero.
RCOND = 1e-12


def require_finite(a, what="input"):
    """Raise InvalidInputError if `a` contains NaN or inf."""
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{what} contains non-finite entries")
    return a


def as_matrix(m, what="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {m.shape}")
    return m


def as_vector(v, what="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError(f"{what} must be 1-D, got shape {v.shape}")
    return v


def pinv(m):
    """Moore-Penrose pseudoinverse via SVD.

    Works for rank-deficient and non-square input. Singular values below
    RCOND times the largest one are treated as zero.
    """
    m = as_matrix(m)
    require_finite(m, "pinv input")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    keep = s > RCOND * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def penrose_residuals(m, m_pinv):
    """Max-abs residual of each of the four Penrose conditions."""
    m = as_matrix(m)
    p = as_matrix(m_pinv)
    mp = m @ p
    pm = p @ m
    return (
        float(np.max(np.abs(m @ pm - m))),
        float(np.max(np.abs(p @ mp - p))),
        float(np.max(np.abs(mp - mp.T))),
        float(np.max(np.abs(pm - pm.T))),
    )
