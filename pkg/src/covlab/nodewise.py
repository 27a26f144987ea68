"""Lasso by coordinate descent, GIC tuning, and nodewise precision estimators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from covlab.errors import EstimationError
from covlab.factor import ols_factor_fit
from covlab.linalg import CovarianceEstimate, smw_precision, spd_inverse, symmetrize

TOL = 1e-7
MAX_SWEEPS = 1000
N_GRID = 50
GRID_RATIO = 0.01


@dataclass
class LassoSolution:
    coefficients: np.ndarray
    lam: float
    objective: float
    active_set: np.ndarray
    n_sweeps: int = 0
    converged: bool = True
    history: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)


@dataclass
class NodewiseRow:
    j: int
    tau_sq: float
    gamma: np.ndarray
    row: np.ndarray


@njit(cache=True, nogil=True)
def _sweep(G, r, lam, beta, coords, n_coords):
    """One cyclic pass over ``coords[:n_coords]``; returns the largest change."""
    m = r.shape[0]
    max_delta = 0.0
    for t in range(n_coords):
        k = coords[t]
        gkk = G[k, k]
        if gkk <= 0.0:
            continue
        old = beta[k]
        z = r[k] + gkk * old
        if z > lam:
            new = (z - lam) / gkk
        elif z < -lam:
            new = (z + lam) / gkk
        else:
            new = 0.0
        if new != old:
            d = new - old
            beta[k] = new
            for i in range(m):
                r[i] -= G[i, k] * d
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
    return max_delta


@njit(cache=True, nogil=True)
def _objective(c, r, yy, lam, beta):
    obj = yy
    for k in range(c.shape[0]):
        obj += -c[k] * beta[k] - r[k] * beta[k] + 2.0 * lam * abs(beta[k])
    return obj


@njit(cache=True, nogil=True)
def _cd(G, c, yy, lam, beta, tol, max_sweeps, history):
    """Coordinate descent on ``yy - 2 c'b + b'Gb + 2 lam |b|_1`` in place.

    ``r = c - G b`` is kept current so each update costs O(m). Full sweeps
    alternate with sweeps restricted to the active set; convergence is
    declared only after a full sweep moves no coefficient by ``tol`` or more.
    Returns the number of sweeps run and fills ``history`` with the
    objective after each sweep.
    """
    m = c.shape[0]
    r = c - G @ beta
    all_coords = np.arange(m)
    active = np.empty(m, dtype=np.int64)
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _sweep(G, r, lam, beta, all_coords, m)
        if sweeps < history.shape[0]:
            history[sweeps] = _objective(c, r, yy, lam, beta)
        sweeps += 1
        if delta < tol:
            break
        n_active = 0
        for k in range(m):
            if beta[k] != 0.0:
                active[n_active] = k
                n_active += 1
        while sweeps < max_sweeps:
            delta = _sweep(G, r, lam, beta, active, n_active)
            if sweeps < history.shape[0]:
                history[sweeps] = _objective(c, r, yy, lam, beta)
            sweeps += 1
            if delta < tol:
                break
    return sweeps


@njit(cache=True, nogil=True)
def _path(G, c, yy, lambdas, tol, max_sweeps):
    """Warm-started solutions along a descending grid (one row per lambda)."""
    m = c.shape[0]
    L = lambdas.shape[0]
    coefs = np.zeros((L, m))
    beta = np.zeros(m)
    hist = np.empty(0)
    for i in range(L):
        _cd(G, c, yy, lambdas[i], beta, tol, max_sweeps, hist)
        coefs[i, :] = beta
    return coefs


def _gram(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    G = np.ascontiguousarray(X.T @ X / n)
    c = X.T @ y / n
    return G, c, float(y @ y / n), n


def lambda_max(X, y) -> float:
    """Smallest penalty at which the lasso solution is identically zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    return float(np.max(np.abs(X.T @ y)) / X.shape[0]) if X.shape[1] else 0.0


def default_grid(lmax: float, n_grid: int = N_GRID, ratio: float = GRID_RATIO) -> np.ndarray:
    """Descending log-spaced grid from ``lmax`` to ``ratio * lmax``."""
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, ratio * lmax, n_grid)


def lasso(X, y, lam: float, init=None, tol: float = TOL, max_sweeps: int = MAX_SWEEPS) -> LassoSolution:
    """Minimize ``|y - X g|^2 / n + 2 lam |g|_1`` by cyclic coordinate descent."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    G, c, yy, _ = _gram(X, y)
    m = c.shape[0]
    beta = np.zeros(m) if init is None else np.array(init, dtype=float)
    history = np.full(max_sweeps, np.nan)
    sweeps = _cd(G, c, yy, float(lam), beta, tol, max_sweeps, history)
    obj = float(yy - 2 * c @ beta + beta @ G @ beta + 2 * lam * np.abs(beta).sum())
    return LassoSolution(
        coefficients=beta,
        lam=float(lam),
        objective=obj,
        active_set=np.flatnonzero(beta),
        n_sweeps=int(sweeps),
        converged=sweeps < max_sweeps,
        history=history[:sweeps],
    )


def _ssr_over_n(G, c, yy, coefs):
    """``|y - X g|^2 / n`` for each row of ``coefs``."""
    return yy - 2 * coefs @ c + np.einsum("li,ij,lj->l", coefs, G, coefs)


def gic_scores(sigma2, q, n: int, p_total: int, variant: str) -> np.ndarray:
    sigma2 = np.asarray(sigma2, dtype=float)
    q = np.asarray(q, dtype=float)
    loglog = np.log(np.log(n))
    if variant == "naive":
        with np.errstate(divide="ignore"):
            base = np.where(sigma2 > 0, np.log(np.maximum(sigma2, 1e-300)), -np.inf)
        score = base + q * np.log(p_total) / n * loglog
        # a perfect fit sends the log to -inf; treat it as unusable
        return np.where(sigma2 > 0, score, np.inf)
    if variant == "residual":
        return sigma2 + q * np.log(p_total - 1) * loglog / n
    raise ValueError(f"unknown GIC variant {variant!r}")


def gic_select(X, y, grid=None, p_total=None, variant: str = "naive"):
    """Pick the grid penalty minimizing GIC; ties go to the larger penalty."""
    G, c, yy, n = _gram(X, y)
    if n < 3:
        raise ValueError("GIC needs n >= 3")
    if p_total is None:
        p_total = c.shape[0] + 1
    grid = default_grid(float(np.max(np.abs(c)))) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    order = np.argsort(-grid, kind="stable")
    lams = grid[order]
    coefs = _path(G, c, yy, lams, TOL, MAX_SWEEPS)
    sigma2 = np.maximum(_ssr_over_n(G, c, yy, coefs), 0.0)
    q = (coefs != 0).sum(axis=1)
    scores = gic_scores(sigma2, q, n, p_total, variant)
    i = int(np.argmin(scores))
    beta = coefs[i].copy()
    obj = float(yy - 2 * c @ beta + beta @ G @ beta + 2 * lams[i] * np.abs(beta).sum())
    sol = LassoSolution(beta, float(lams[i]), obj, np.flatnonzero(beta))
    return float(lams[i]), sol


def _check_columns(G, names=None):
    bad = np.flatnonzero(np.diag(G) <= 1e-14 * max(1.0, float(np.max(np.diag(G)))))
    if bad.size:
        j = int(bad[0])
        label = names[j] if names is not None else f"column {j}"
        raise EstimationError(f"asset {label} has zero variance")


def nodewise_precision(Y, grid=None, asset_names=None, n_grid: int = N_GRID,
                       ratio: float = GRID_RATIO) -> CovarianceEstimate:
    """Lasso-regress each asset on all others, pick each row's penalty by
    GIC and stack the rows into a precision estimate (then symmetrize).

    ``grid`` may be a shared sequence of penalties; by default each row gets
    its own log grid below that row's ``lambda_max``.
    """
    Y = np.asarray(Y, dtype=float)
    n, p = Y.shape
    if n < 3 or p < 2:
        raise ValueError("nodewise regression needs n >= 3 and p >= 2")
    Yc = Y - Y.mean(axis=0)
    G_full = Yc.T @ Yc / n
    _check_columns(G_full, asset_names)
    theta = np.zeros((p, p))
    lams = np.empty(p)
    tau2 = np.empty(p)
    idx = np.arange(p)
    for j in range(p):
        rest = idx != j
        G = np.ascontiguousarray(G_full[np.ix_(rest, rest)])
        c = G_full[rest, j]
        yy = G_full[j, j]
        row_grid = default_grid(float(np.max(np.abs(c))), n_grid, ratio) if grid is None else np.sort(np.asarray(grid, dtype=float))[::-1]
        coefs = _path(G, c, yy, np.ascontiguousarray(row_grid), TOL, MAX_SWEEPS)
        sigma2 = np.maximum(_ssr_over_n(G, c, yy, coefs), 0.0)
        scores = gic_scores(sigma2, (coefs != 0).sum(axis=1), n, p, "naive")
        i = int(np.argmin(scores))
        gamma = coefs[i]
        t2 = sigma2[i] + row_grid[i] * np.abs(gamma).sum()
        if not t2 > 0:
            raise EstimationError(f"non-positive tau^2 for asset {j}")
        row = np.empty(p)
        row[j] = 1.0
        row[rest] = -gamma
        theta[j] = row / t2
        lams[j] = row_grid[i]
        tau2[j] = t2
    return CovarianceEstimate(symmetrize(theta), None, "nw", {
        "lambda": lams,
        "tau_sq": tau2,
        "asymmetry": float(np.max(np.abs(theta - theta.T))),
    })


def nodewise_row(Y, j: int, lam: float) -> NodewiseRow:
    """One row of the naive nodewise estimator at a fixed penalty."""
    Y = np.asarray(Y, dtype=float)
    Yc = Y - Y.mean(axis=0)
    n, p = Yc.shape
    rest = np.arange(p) != j
    sol = lasso(Yc[:, rest], Yc[:, j], lam)
    resid = Yc[:, j] - Yc[:, rest] @ sol.coefficients
    t2 = float(resid @ resid / n + lam * np.abs(sol.coefficients).sum())
    row = np.empty(p)
    row[j] = 1.0
    row[rest] = -sol.coefficients
    return NodewiseRow(j, t2, sol.coefficients, row / t2)


def residual_nodewise_precision(Y, X, grid=None, asset_names=None, n_grid: int = N_GRID,
                                ratio: float = GRID_RATIO) -> CovarianceEstimate:
    """Nodewise regression on OLS factor residuals, with one penalty shared
    by every row, mapped to a return precision by Woodbury.

    ``Y`` is ``n x p`` and ``X`` is ``K x n``. The shared penalty minimizes
    the GIC summed over rows.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = Y.shape
    if n < 3 or p < 2:
        raise ValueError("residual nodewise needs n >= 3 and p >= 2")
    fit = ols_factor_fit(Y, X)
    U = fit.residuals
    G_full = U.T @ U / n
    _check_columns(G_full, asset_names)
    off = G_full - np.diag(np.diag(G_full))
    if grid is None:
        lams = default_grid(float(np.max(np.abs(off))), n_grid, ratio)
    else:
        lams = np.sort(np.asarray(grid, dtype=float))[::-1]
    lams = np.ascontiguousarray(lams)
    idx = np.arange(p)
    paths = []
    total = np.zeros(lams.size)
    for j in range(p):
        rest = idx != j
        G = np.ascontiguousarray(G_full[np.ix_(rest, rest)])
        c = G_full[rest, j]
        yy = G_full[j, j]
        coefs = _path(G, c, yy, lams, TOL, MAX_SWEEPS)
        ssr = np.maximum(_ssr_over_n(G, c, yy, coefs), 0.0)
        total += gic_scores(ssr, (coefs != 0).sum(axis=1), n, p, "residual")
        paths.append(coefs)
    i = int(np.argmin(total))
    lam_star = float(lams[i])
    omega = np.zeros((p, p))
    tau2 = np.empty(p)
    for j in range(p):
        rest = idx != j
        gamma = paths[j][i]
        t2 = float(G_full[j, j] - G_full[j, rest] @ gamma)
        if not t2 > 0:
            raise EstimationError(f"non-positive tau^2 for asset {j} at lambda={lam_star:.3g}")
        omega[j, j] = 1.0 / t2
        omega[j, rest] = -gamma / t2
        tau2[j] = t2
    omega_sym = symmetrize(omega)
    sf_inv = spd_inverse(fit.factor_cov, "factor covariance")
    gamma_hat = smw_precision(omega, fit.loadings, sf_inv, omega_inner=omega_sym, symmetric=False)
    return CovarianceEstimate(symmetrize(gamma_hat), None, "rnw", {
        "lambda": lam_star,
        "tau_sq": tau2,
        "asymmetry": float(np.max(np.abs(gamma_hat - gamma_hat.T))),
    })
