"""Linear, nonlinear and single-factor nonlinear covariance shrinkage."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import isotonic_regression

from covlab.errors import EstimationError
from covlab.linalg import (
    CovarianceEstimate,
    spd_inverse,
    spectral,
    sym_sqrt,
    symmetrize,
)

MIN_NLS_SAMPLE = 12


@dataclass
class LinearShrinkageDiagnostics:
    m_hat: float
    d_hat2: float
    b_bar2: float
    b_hat2: float
    a_hat2: float
    intensity: float


@dataclass
class NlsDiagnostics:
    c: float
    shrunk_eigenvalues: np.ndarray
    stieltjes_abs: np.ndarray  # |s(lambda_i)| on the positive cluster
    stieltjes_zero: Optional[float]  # s(0), only when p > n
    bandwidth: float
    n_zero: int


def _tnorm2(A: np.ndarray) -> float:
    return float(np.sum(A * A) / A.shape[0])


def linear_shrinkage_cov(Y) -> tuple[np.ndarray, LinearShrinkageDiagnostics]:
    """Convex combination of ``S`` and the scaled identity ``m I``.

    The intensity ``b2/d2`` estimates the share of ``S``'s dispersion around
    the target that is sampling noise. ``Y`` is ``T x p`` and should be
    demeaned by the caller.
    """
    Y = np.asarray(Y, dtype=float)
    T, p = Y.shape
    if T < 1 or p < 2:
        raise ValueError("linear shrinkage needs p >= 2")
    S = symmetrize(Y.T @ Y / T)
    m = float(np.trace(S) / p)
    if not m > 0:
        raise EstimationError("degenerate panel: mean eigenvalue is zero")
    d2 = _tnorm2(S - m * np.eye(p))
    # ||y y' - S||_F^2 = |y|^4 - 2 y'Sy + ||S||_F^2
    sq = np.sum(Y * Y, axis=1)
    quad = np.einsum("ti,ij,tj->t", Y, S, Y)
    per_t = (sq ** 2 - 2 * quad + np.sum(S * S)) / p
    b_bar2 = float(np.sum(np.maximum(per_t, 0.0)) / T ** 2)
    b2 = min(b_bar2, d2)
    a2 = d2 - b2
    if d2 > 0:
        intensity = b2 / d2
        shrunk = intensity * m * np.eye(p) + (a2 / d2) * S
    else:
        # S already equals the target
        intensity = 0.0
        shrunk = S.copy()
    return symmetrize(shrunk), LinearShrinkageDiagnostics(m, d2, b_bar2, b2, a2, intensity)


def linear_shrinkage(Y) -> tuple[CovarianceEstimate, LinearShrinkageDiagnostics]:
    """Linear shrinkage covariance and its inverse (see ``linear_shrinkage_cov``)."""
    shrunk, diag = linear_shrinkage_cov(Y)
    est = CovarianceEstimate(
        precision=spd_inverse(shrunk, "linear shrinkage covariance"),
        cov=shrunk,
        method="lslw",
        tuning={"intensity": diag.intensity, "m_hat": diag.m_hat},
    )
    return est, diag


def _epanechnikov_terms(lam: np.ndarray, h: float):
    """Kernel density and Hilbert transform of the eigenvalue cloud, evaluated
    at each eigenvalue, with locally adaptive bandwidth ``h * lambda_j``."""
    L = lam[:, None]
    width = h * lam[None, :]
    x = (L - lam[None, :]) / width
    r5 = np.sqrt(5.0)
    dens = (3 / (4 * r5)) * np.maximum(1 - x ** 2 / 5, 0.0) / width
    with np.errstate(divide="ignore", invalid="ignore"):
        logt = np.log(np.abs((r5 - x) / (r5 + x)))
    hilb = (-3 / (10 * np.pi)) * x + (3 / (4 * r5 * np.pi)) * (1 - x ** 2 / 5) * logt
    edge = np.isclose(np.abs(x), r5)
    hilb[edge] = ((-3 / (10 * np.pi)) * x)[edge]
    return dens.mean(axis=1), (hilb / width).mean(axis=1)


def estimate_stieltjes(eigenvalues, c: float, T: int) -> NlsDiagnostics:
    """Bona-fide shrunk eigenvalues ``1 / (lambda |s(lambda)|^2)``.

    ``eigenvalues`` are the ``p`` ascending sample eigenvalues and ``T`` the
    effective sample size; when ``p > T`` the smallest ``p - T`` form the
    null cluster and receive the common value ``1 / ((c - 1) s(0))``.
    """
    lam_all = np.asarray(eigenvalues, dtype=float)
    p = lam_all.size
    if c <= 0 or np.isclose(c, 1.0):
        raise EstimationError("c=1 excluded: concentration ratio must differ from one")
    if T < MIN_NLS_SAMPLE:
        raise EstimationError(f"nonlinear shrinkage needs at least {MIN_NLS_SAMPLE} observations")
    if np.any(np.diff(lam_all) < -1e-12 * max(1.0, abs(lam_all[-1]))):
        raise ValueError("eigenvalues must be sorted ascending")
    if not np.any(lam_all > 0):
        raise EstimationError("all eigenvalues are zero")
    n_zero = max(0, p - T)
    lam = lam_all[n_zero:]
    if np.any(lam <= 0):
        raise EstimationError("non-positive eigenvalue in the positive cluster")
    h = T ** (-1.0 / 3.0)
    f, hf = _epanechnikov_terms(lam, h)
    s_zero = None
    if p <= T:
        s_abs2 = ((np.pi * c * lam * f) ** 2 + (1 - c - np.pi * c * lam * hf) ** 2) / lam ** 2
        d = 1.0 / (lam * s_abs2)
    else:
        s_abs2 = np.pi ** 2 * (f ** 2 + hf ** 2)
        d_pos = 1.0 / (lam * s_abs2)
        r5h = np.sqrt(5.0) * h
        hf0 = (1 / np.pi) * (
            3 / (10 * h ** 2)
            + 3 / (4 * np.sqrt(5.0) * h) * (1 - 1 / (5 * h ** 2)) * np.log((1 + r5h) / (1 - r5h))
        ) * np.mean(1.0 / lam)
        s_zero = float(np.pi * hf0)
        d0 = 1.0 / ((p / T - 1) * s_zero)
        d = np.concatenate([np.full(n_zero, d0), d_pos])
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise EstimationError("nonlinear shrinkage produced non-positive eigenvalues")
    # kernel wiggles can break the ordering; project back onto monotone
    # sequences (mean-preserving, so the trace is unchanged)
    d[n_zero:] = isotonic_regression(d[n_zero:]).x
    return NlsDiagnostics(
        c=p / T,
        shrunk_eigenvalues=d,
        stieltjes_abs=np.sqrt(s_abs2),
        stieltjes_zero=s_zero,
        bandwidth=h,
        n_zero=n_zero,
    )


def nls_shrinkage(Y, ddof: int = 1) -> tuple[CovarianceEstimate, NlsDiagnostics]:
    """Nonlinear shrinkage: keep the sample eigenvectors, replace each
    eigenvalue by its bona-fide optimal value.

    ``ddof=1`` treats ``Y`` as demeaned, so the effective sample size is
    ``T - 1`` and ``S = Y'Y/(T-1)``; pass ``ddof=0`` for raw second moments.
    """
    Y = np.asarray(Y, dtype=float)
    T, p = Y.shape
    n = T - ddof
    if p == T or p == n:
        raise EstimationError("c=1 excluded: number of assets equals the sample size")
    if n < MIN_NLS_SAMPLE:
        raise EstimationError(f"nonlinear shrinkage needs at least {MIN_NLS_SAMPLE} observations")
    S = symmetrize(Y.T @ Y / n)
    dec = spectral(S)
    diag = estimate_stieltjes(np.maximum(dec.eigenvalues, 0.0), p / n, n)
    U = dec.eigenvectors
    d = diag.shrunk_eigenvalues
    cov = symmetrize((U * d) @ U.T)
    prec = symmetrize((U / d) @ U.T)
    est = CovarianceEstimate(prec, cov, "nls", {"c": p / n, "bandwidth": diag.bandwidth})
    return est, diag


def single_factor_cov(Y, floor: float = 1e-10) -> np.ndarray:
    """Exact one-factor covariance with the equal-weighted market as factor."""
    Y = np.asarray(Y, dtype=float)
    T, p = Y.shape
    if T < 3:
        raise ValueError("single-factor covariance needs T >= 3")
    Yc = Y - Y.mean(axis=0)
    m = Yc.mean(axis=1)
    v_m = float(m @ m / T)
    if not v_m > 0:
        raise EstimationError("market factor has zero variance")
    beta = Yc.T @ m / T / v_m
    resid = Yc - np.outer(m, beta)
    resid_var = np.sum(resid * resid, axis=0) / T
    panel_var = float(np.mean(np.sum(Yc * Yc, axis=0) / T))
    resid_var = np.maximum(resid_var, floor * panel_var)
    return symmetrize(v_m * np.outer(beta, beta) + np.diag(resid_var))


def sfnl_shrinkage(Y, target=None, ddof: int = 1) -> tuple[CovarianceEstimate, NlsDiagnostics]:
    """Nonlinear shrinkage applied after whitening by a single-factor
    covariance, then mapped back: ``Sf^1/2 Sc Sf^1/2``."""
    Y = np.asarray(Y, dtype=float)
    sigma_f = single_factor_cov(Y) if target is None else np.asarray(target, dtype=float)
    root, inv_root = sym_sqrt(sigma_f)
    inner, diag = nls_shrinkage(Y @ inv_root, ddof=ddof)
    cov = symmetrize(root @ inner.cov @ root)
    prec = symmetrize(inv_root @ inner.precision @ inv_root)
    est = CovarianceEstimate(prec, cov, "sfnl", dict(inner.tuning))
    return est, diag
