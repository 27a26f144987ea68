"""Shared numerical kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from covlab.errors import EstimationError


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns paired with eigenvalues

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


@dataclass
class CovarianceEstimate:
    """A covariance/precision pair. ``cov`` is None for nodewise estimators,
    which never define a covariance."""

    precision: np.ndarray
    cov: Optional[np.ndarray]
    method: str
    tuning: dict = field(default_factory=dict)


def sample_covariance(Y, demean: bool = False) -> np.ndarray:
    """``Y'Y/T`` for a ``T x p`` matrix, optionally after removing column means."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("Y must be a T x p matrix")
    T = Y.shape[0]
    if T < 2:
        raise ValueError("sample covariance needs T >= 2")
    if demean:
        Y = Y - Y.mean(axis=0)
    S = Y.T @ Y / T
    return 0.5 * (S + S.T)


def symmetrize(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("symmetrize needs a square matrix")
    return (M + M.T) / 2


def spectral(S, tol: float = 1e-8) -> SpectralDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("spectral needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T), initial=0.0) > tol * scale:
        raise EstimationError("spectral decomposition requires a symmetric matrix")
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    return SpectralDecomposition(vals, vecs)


def spd_inverse(A, what: str = "matrix") -> np.ndarray:
    """Inverse through a Cholesky factorization; no pseudo-inverse fallback."""
    A = np.asarray(A, dtype=float)
    try:
        c = sla.cho_factor(0.5 * (A + A.T), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, sla.LinAlgError, ValueError):
        raise EstimationError(f"{what} is not positive definite; cannot invert") from None
    inv = sla.cho_solve(c, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def condition_number(A) -> float:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s[-1] == 0:
        return float("inf")
    return float(s[0] / s[-1])


def sym_sqrt(S) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of an SPD matrix."""
    d = spectral(S)
    if d.eigenvalues[0] <= 0:
        raise EstimationError("matrix square root needs a positive definite matrix")
    U = d.eigenvectors
    r = np.sqrt(d.eigenvalues)
    root = (U * r) @ U.T
    inv_root = (U / r) @ U.T
    return symmetrize(root), symmetrize(inv_root)


def smw_precision(omega, B, sigma_f_inv, omega_inner=None, max_cond: float = 1e12,
                  symmetric: bool = True) -> np.ndarray:
    """Woodbury assembly ``Omega - Omega B [Sf^-1 + B' Omega B]^-1 B' Omega``.

    ``omega_inner`` replaces ``Omega`` inside the bracket only (the residual
    nodewise form uses its symmetrized precision there).
    """
    omega = np.asarray(omega, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    sigma_f_inv = np.atleast_2d(np.asarray(sigma_f_inv, dtype=float))
    inner_omega = omega if omega_inner is None else np.asarray(omega_inner, dtype=float)
    inner = sigma_f_inv + B.T @ inner_omega @ B
    cond = condition_number(inner)
    if not np.isfinite(cond) or cond > max_cond:
        raise EstimationError(f"SMW inner matrix is singular (condition number {cond:.3e})")
    OB = omega @ B
    BO = B.T @ omega
    out = omega - OB @ np.linalg.solve(inner, BO)
    return symmetrize(out) if symmetric else out
