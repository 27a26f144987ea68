"""Closed-form GMV, Markowitz and maximum-Sharpe weights, plus plug-in analytics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from covlab import OBJECTIVES
from covlab.errors import PortfolioError

DEFAULT_RHO1 = 0.01
DEFAULT_SIGMA = 0.05


@dataclass
class PortfolioWeights:
    weights: np.ndarray
    objective: str
    method: str = ""
    param: Optional[float] = None  # rho1 for mv, sigma for msr


@dataclass
class PortfolioAnalytics:
    expected_return: float
    variance: float
    sharpe: float
    A: float
    D: float
    F: float


def _theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValueError("precision matrix must be square")
    return theta


def _vec(x, p: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != p:
        raise ValueError(f"{name} has length {x.size}, expected {p}")
    return x


def _terms(theta, mu):
    """Unscaled ``A1 = 1'T1``, ``F1 = 1'T mu``, ``D1 = mu'T mu`` and the two
    directions ``T 1`` and ``T mu``."""
    t1 = theta.sum(axis=1)
    tmu = theta @ mu
    return float(t1.sum()), float(tmu.sum()), float(mu @ tmu), t1, tmu


def gmv_weights(theta, method: str = "") -> PortfolioWeights:
    theta = _theta(theta)
    p = theta.shape[0]
    t1 = theta.sum(axis=1)
    a1 = float(t1.sum())
    if abs(a1) < 1e-12 * p:
        raise PortfolioError("degenerate normalizer: 1'theta 1 is zero")
    return PortfolioWeights(t1 / a1, "gmv", method)


def _mv_denominator(a1, f1, d1):
    det = a1 * d1 - f1 ** 2
    if abs(det) <= 1e-12 * max(abs(a1 * d1), f1 ** 2, 1e-300):
        raise PortfolioError("collinear mu-hat and 1 directions: A1 D1 - F1^2 is zero")
    return det


def markowitz_weights(theta, mu_hat, rho1: float = DEFAULT_RHO1, method: str = "") -> PortfolioWeights:
    """Minimum-variance weights meeting ``w'1 = 1`` and ``w'mu = rho1``."""
    theta = _theta(theta)
    mu = _vec(mu_hat, theta.shape[0], "mu_hat")
    a1, f1, d1, t1, tmu = _terms(theta, mu)
    det = _mv_denominator(a1, f1, d1)
    w = (d1 - rho1 * f1) / det * t1 + (rho1 * a1 - f1) / det * tmu
    return PortfolioWeights(w, "mv", method, float(rho1))


def msr_weights(theta, mu_hat, sigma: float = DEFAULT_SIGMA, method: str = "") -> PortfolioWeights:
    """``sigma * theta mu / sqrt(mu' theta mu)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    theta = _theta(theta)
    mu = _vec(mu_hat, theta.shape[0], "mu_hat")
    tmu = theta @ mu
    q = float(mu @ tmu)
    if not q > 0:
        raise PortfolioError(f"non-positive quadratic form mu' theta mu = {q:.3e}")
    return PortfolioWeights(sigma * tmu / np.sqrt(q), "msr", method, float(sigma))


def weights_for(objective: str, theta, mu_hat, rho1: float = DEFAULT_RHO1,
                sigma: float = DEFAULT_SIGMA, method: str = "") -> PortfolioWeights:
    if objective == "gmv":
        return gmv_weights(theta, method)
    if objective == "mv":
        return markowitz_weights(theta, mu_hat, rho1, method)
    if objective == "msr":
        return msr_weights(theta, mu_hat, sigma, method)
    raise ValueError(f"unknown objective {objective!r}; expected one of {', '.join(OBJECTIVES)}")


def analytics(theta, mu_hat, objective: str, rho1: float = DEFAULT_RHO1,
              sigma: float = DEFAULT_SIGMA) -> PortfolioAnalytics:
    """In-sample plug-in return, variance and Sharpe ratio.

    ``A, D, F`` are the 1/p-scaled quadratic forms. Variance is the implied
    ``w' theta^-1 w``. Returns and Sharpe ratios use the scaled estimator
    forms, so the GMV and MSR Sharpe ratios carry a ``1/sqrt(p)`` factor
    relative to the raw ratio while the MV one does not.
    """
    theta = _theta(theta)
    p = theta.shape[0]
    mu = _vec(mu_hat, p, "mu_hat")
    a1, f1, d1, _, _ = _terms(theta, mu)
    A, F, D = a1 / p, f1 / p, d1 / p
    if objective == "gmv":
        if abs(a1) < 1e-12 * p:
            raise PortfolioError("degenerate normalizer: 1'theta 1 is zero")
        ret = F / A
        var = 1.0 / a1
        sr = F / np.sqrt(A) if A > 0 else float("nan")
    elif objective == "mv":
        det = _mv_denominator(a1, f1, d1) / p ** 2
        num = A * rho1 ** 2 - 2 * F * rho1 + D
        ret = float(rho1)
        var = num / det / p
        sr = rho1 * np.sqrt(p) * np.sqrt(det) / np.sqrt(num) if det > 0 and num > 0 else float("nan")
    elif objective == "msr":
        if not d1 > 0:
            raise PortfolioError(f"non-positive quadratic form mu' theta mu = {d1:.3e}")
        ret = sigma * np.sqrt(D)
        var = sigma ** 2
        sr = np.sqrt(D)
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return PortfolioAnalytics(float(ret), float(var), float(sr), A, D, F)
