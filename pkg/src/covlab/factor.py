"""Observed-factor thresholded estimator and POET."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from covlab.errors import EstimationError
from covlab.linalg import (
    CovarianceEstimate,
    condition_number,
    smw_precision,
    spd_inverse,
    symmetrize,
)

OFT_OMEGA_CONST = 0.1
POET_C = 0.5
MAX_COND = 1e12


@dataclass
class FactorFit:
    loadings: np.ndarray  # p x K
    residuals: np.ndarray  # T x p
    factor_cov: np.ndarray  # K x K
    kind: str  # "observed" or "latent"


@dataclass
class ThresholdedErrorCov:
    matrix: np.ndarray
    omega_T: float
    threshold_const: float
    kept_fraction: float
    positive_definite: bool
    diagonal_bump: float = 0.0


def factor_sample_cov(X) -> np.ndarray:
    """``XX'/T - X 1 1' X' / T^2`` for a ``K x T`` factor matrix."""
    X = np.asarray(X, dtype=float)
    T = X.shape[1]
    s = X.sum(axis=1)
    return symmetrize(X @ X.T / T - np.outer(s, s) / T ** 2)


def ols_factor_fit(Y, X) -> FactorFit:
    """Per-asset least squares of ``T x p`` returns on ``K x T`` factors,
    without intercept."""
    Y = np.asarray(Y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = Y.shape
    if X.shape[1] != T:
        raise ValueError(f"factor matrix must be K x T with T={T}, got {X.shape}")
    XX = X @ X.T
    cond = condition_number(XX)
    if X.shape[0] >= T or not np.isfinite(cond) or cond > MAX_COND:
        raise EstimationError(f"factor cross-product XX' is rank deficient (condition number {cond:.3e})")
    B = np.linalg.solve(XX, X @ Y).T
    resid = Y - X.T @ B.T
    sigma_f = factor_sample_cov(X)
    cond_f = condition_number(sigma_f)
    if not np.isfinite(cond_f) or cond_f > MAX_COND:
        raise EstimationError(f"factor covariance is singular (condition number {cond_f:.3e})")
    return FactorFit(B, resid, sigma_f, "observed")


def adaptive_threshold_cov(residuals, omega_T: float, C: float = 1.0) -> ThresholdedErrorCov:
    """Entrywise threshold of the residual covariance at ``C sqrt(theta_ij) omega_T``.

    ``theta_ij`` is the sample variance of ``u_it u_jt``; the diagonal is
    never thresholded. A non positive definite result is flagged, not raised.
    """
    U = np.asarray(residuals, dtype=float)
    T, p = U.shape
    if T < 2:
        raise ValueError("thresholding needs T >= 2")
    sigma = U.T @ U / T
    sigma = symmetrize(sigma)
    # theta_ij = mean_t (u_i u_j)^2 - sigma_ij^2
    U2 = U * U
    theta = np.maximum(U2.T @ U2 / T - sigma ** 2, 0.0)
    tau = C * np.sqrt(theta) * omega_T
    keep = np.abs(sigma) >= tau
    np.fill_diagonal(keep, True)
    out = np.where(keep, sigma, 0.0)
    off = p * (p - 1)
    kept = (int(keep.sum()) - p) / off if off else 0.0
    eig_min = float(np.linalg.eigvalsh(out)[0])
    return ThresholdedErrorCov(out, float(omega_T), float(C), kept, eig_min > 0)


def _ensure_pd(th: ThresholdedErrorCov) -> ThresholdedErrorCov:
    eig_min = float(np.linalg.eigvalsh(th.matrix)[0])
    if eig_min > 0:
        return th
    bump = abs(eig_min) + 1e-8
    mat = th.matrix + bump * np.eye(th.matrix.shape[0])
    return ThresholdedErrorCov(mat, th.omega_T, th.threshold_const, th.kept_fraction, False, bump)


def oft_omega(K: int, p: int, T: int, const: float = OFT_OMEGA_CONST) -> float:
    return const * K * np.sqrt(np.log(p) / T)


def oft_precision(Y, X, omega_const: float = OFT_OMEGA_CONST, C: float = 1.0) -> CovarianceEstimate:
    """Observed-factor covariance ``B Sf B' + Su_th`` inverted by Woodbury.

    ``X`` is ``K x T``; the threshold rate defaults to ``0.1 K sqrt(log p / T)``.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = Y.shape
    fit = ols_factor_fit(Y, X)
    K = X.shape[0]
    th = _ensure_pd(adaptive_threshold_cov(fit.residuals, oft_omega(K, p, T, omega_const), C))
    omega = spd_inverse(th.matrix, "thresholded error covariance (try a larger threshold)")
    sf_inv = spd_inverse(fit.factor_cov, "factor covariance")
    prec = smw_precision(omega, fit.loadings, sf_inv)
    cov = symmetrize(fit.loadings @ fit.factor_cov @ fit.loadings.T + th.matrix)
    return CovarianceEstimate(prec, cov, "oft", {
        "K": K,
        "omega_T": th.omega_T,
        "kept_fraction": th.kept_fraction,
        "diagonal_bump": th.diagonal_bump,
    })


def _top_factors(Y, k: int) -> np.ndarray:
    """``sqrt(T)`` times the leading ``k`` eigenvectors of the ``T x T`` Gram matrix."""
    T = Y.shape[0]
    vals, vecs = np.linalg.eigh(Y @ Y.T)
    order = np.argsort(vals)[::-1][:k]
    F = vecs[:, order] * np.sqrt(T)
    # fix column signs so results do not depend on the LAPACK sign choice
    signs = np.sign(F[np.argmax(np.abs(F), axis=0), np.arange(k)])
    signs[signs == 0] = 1.0
    return F * signs


def num_factors_criterion(Y, M: int) -> np.ndarray:
    """Information criterion values for ``K = 1..M``."""
    Y = np.asarray(Y, dtype=float)
    T, p = Y.shape
    g = (p + T) / (p * T) * np.log(min(p, T))
    F_all = _top_factors(Y, M)
    ic = np.empty(M)
    for k in range(1, M + 1):
        F = F_all[:, :k]
        R = Y - F @ (F.T @ Y) / T
        V = np.sum(R * R) / (p * T)
        ic[k - 1] = np.log(V) + k * g
    return ic


def select_num_factors(Y, M: int) -> int:
    """Bai-Ng style selection of the latent factor count in ``1..M``."""
    Y = np.asarray(Y, dtype=float)
    T, p = Y.shape
    if not 1 <= M < min(p, T):
        raise ValueError(f"need 1 <= M < min(p, T) = {min(p, T)}, got M={M}")
    ic = num_factors_criterion(Y, M)
    return int(np.argmin(ic)) + 1  # argmin takes the first, i.e. smallest, on ties


def poet_fit(Y, K: int) -> FactorFit:
    Y = np.asarray(Y, dtype=float)
    T = Y.shape[0]
    F = _top_factors(Y, K)
    B = Y.T @ F / T
    resid = Y - F @ B.T
    return FactorFit(B, resid, np.eye(K), "latent")


def poet_omega(p: int, T: int) -> float:
    return 1 / np.sqrt(p) + np.sqrt(np.log(p) / T)


def poet_precision(Y, M: int = 8, C: float = POET_C, K=None) -> CovarianceEstimate:
    """POET: principal-component factors plus adaptively thresholded
    residual covariance, combined by Woodbury with identity factor covariance.

    ``Y`` is ``T x p``. ``K`` fixes the factor count; otherwise it is
    selected in ``1..M``.
    """
    Y = np.asarray(Y, dtype=float)
    T, p = Y.shape
    M = min(M, min(p, T) - 1)
    k_hat = select_num_factors(Y, M) if K is None else int(K)
    fit = poet_fit(Y, k_hat)
    th = _ensure_pd(adaptive_threshold_cov(fit.residuals, poet_omega(p, T), C))
    omega = spd_inverse(th.matrix, "thresholded error covariance")
    prec = smw_precision(omega, fit.loadings, np.eye(k_hat))
    cov = symmetrize(fit.loadings @ fit.loadings.T + th.matrix)
    return CovarianceEstimate(prec, cov, "poet", {
        "K": k_hat,
        "omega_T": th.omega_T,
        "C": C,
        "kept_fraction": th.kept_fraction,
        "diagonal_bump": th.diagonal_bump,
    })
