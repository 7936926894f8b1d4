"""Proximal and projection maps: nuclear, row-l2, rank, row-support, l2 ball."""

from __future__ import annotations

import numpy as np

__all__ = [
    "svd_soft_threshold",
    "row_soft_threshold",
    "best_rank_r",
    "top_k_rows",
    "project_l2_ball",
]

# Singular values below this fraction of the largest count as zero.
RANK_TOL = 1e-10


def svd_soft_threshold(B: np.ndarray, tau: float) -> np.ndarray:
    """Soft-threshold the singular values of B by tau.

    Minimizes 0.5*||Z - B||_F^2 + tau*||Z||_* over Z.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if tau == 0:
        return B.copy()
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (U * s) @ Vt


def row_soft_threshold(X: np.ndarray, tau: float) -> np.ndarray:
    """Shrink each row toward zero by tau in l2 norm (prox of the l1,2 norm)."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    if tau == 0:
        return X.copy()
    norms = np.linalg.norm(X, axis=1)
    scale = np.zeros_like(norms)
    hit = norms > tau
    scale[hit] = 1.0 - tau / norms[hit]
    return X * scale[:, None]


def best_rank_r(B: np.ndarray, r: int) -> np.ndarray:
    """Best rank-r approximation of B in Frobenius norm (truncated SVD)."""
    if r < 0 or r > min(B.shape):
        raise ValueError(f"r must be in [0, {min(B.shape)}], got {r}")
    if r == 0:
        return np.zeros_like(B)
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def top_k_rows(X: np.ndarray, k: int) -> np.ndarray:
    """Keep the k rows with largest l2 norm, zero the rest.

    Ties break toward the smaller row index, so the result is deterministic.
    This is the Frobenius projection onto matrices with at most k nonzero rows.
    """
    if k < 0 or k > X.shape[0]:
        raise ValueError(f"k must be in [0, {X.shape[0]}], got {k}")
    out = np.zeros_like(X)
    if k == 0:
        return out
    norms = np.linalg.norm(X, axis=1)
    # stable sort on -norms keeps ascending index order among ties
    keep = np.argsort(-norms, kind="stable")[:k]
    out[keep] = X[keep]
    return out


def project_l2_ball(v: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Project v onto the closed l2 (Frobenius, if 2-d) ball around center."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    d = v - center
    dist = float(np.linalg.norm(d))
    if dist <= radius:
        return v.copy()
    if radius == 0:
        return center.copy()
    return center + (radius / dist) * d
