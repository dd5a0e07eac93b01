"""Singular value bounding for near-orthogonal weight matrices.

Projection clips every singular value of a weight matrix into the band
[1/(1+eps), 1+eps] and reconstructs, leaving the singular subspaces
untouched. The decomposition is a one-sided Jacobi SVD: head matrices
are small enough that quadratic sweeps converge in a handful of passes,
and the routine stays independent of the LAPACK path used as the oracle
in the tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

__all__ = ["jacobi_svd", "svb_project"]

_SWEEP_LIMIT = 60
_ORTHO_TOL = 1e-14


def _one_sided_jacobi(a: np.ndarray):
    """Orthogonalize the columns of a tall matrix by plane rotations.

    Returns (u, sigma, v) with a = u @ diag(sigma) @ v.T, sigma sorted
    descending. Requires a.shape[0] >= a.shape[1].
    """
    a = a.copy()
    m, n = a.shape
    v = np.eye(n)
    for _ in range(_SWEEP_LIMIT):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai = a[:, i]
                aj = a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if abs(gamma) <= _ORTHO_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a[:, i], a[:, j] = c * ai - s * aj, s * ai + c * aj
                v[:, i], v[:, j] = c * v[:, i] - s * v[:, j], s * v[:, i] + c * v[:, j]
        if not rotated:
            break
    sigma = np.sqrt((a * a).sum(axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    u = np.zeros((m, n))
    for k in range(n):
        if sigma[k] > 0.0:
            u[:, k] = a[:, k] / sigma[k]
        else:
            u[:, k] = _complete_column(u[:, :k])
    return u, sigma, v


def _complete_column(existing: np.ndarray) -> np.ndarray:
    """First canonical basis vector orthogonalized against existing columns."""
    m = existing.shape[0]
    for k in range(m):
        cand = np.zeros(m)
        cand[k] = 1.0
        if existing.shape[1]:
            cand -= existing @ (existing.T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            return cand / norm
    raise NumericError("could not complete an orthonormal basis")


def jacobi_svd(w: np.ndarray):
    """Thin SVD (u, sigma, vt) of a 2-D matrix via one-sided Jacobi.

    Wide matrices are decomposed through their transpose so the sweep
    always runs on a tall operand.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"svd expects a 2-D matrix, got {w.shape}")
    if not np.isfinite(w).all():
        raise NumericError("svd input contains non-finite values")
    if w.shape[0] >= w.shape[1]:
        u, sigma, v = _one_sided_jacobi(w)
        return u, sigma, v.T
    u_t, sigma, v_t = _one_sided_jacobi(w.T)
    return v_t, sigma, u_t.T


def svb_project(w: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip all singular values of ``w`` into [1/(1+eps), 1+eps].

    Idempotent, and changes the matrix by at most max|sigma - clipped|
    in spectral norm because the singular subspaces are reused as-is.
    """
    if epsilon <= 0.0:
        raise ConfigError(f"singular value band width must be positive, got {epsilon}")
    u, sigma, vt = jacobi_svd(w)
    clipped = np.clip(sigma, 1.0 / (1.0 + epsilon), 1.0 + epsilon)
    return (u * clipped) @ vt
