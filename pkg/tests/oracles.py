"""Independent reference implementations used only by the tests.

They favour plain loops and direct solves over the vectorized shortcuts in
the package so that agreement means something.
"""

import itertools

import numpy as np


def random_spd(rng, p, cond=50.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    vals = np.geomspace(1.0, cond, p)
    rng.shuffle(vals)
    return (q * vals) @ q.T


def linear_shrinkage_loop(Y):
    """Step-by-step linear shrinkage with explicit per-observation norms."""
    T, p = Y.shape
    S = sum(np.outer(y, y) for y in Y) / T
    m = np.trace(S) / p
    I = np.eye(p)

    def tn2(A):
        return np.trace(A @ A.T) / p

    d2 = tn2(S - m * I)
    b_bar2 = sum(tn2(np.outer(y, y) - S) for y in Y) / T ** 2
    b2 = min(b_bar2, d2)
    a2 = d2 - b2
    return {"S": S, "m": m, "d2": d2, "b_bar2": b_bar2, "b2": b2, "a2": a2,
            "shrunk": b2 / d2 * m * I + a2 / d2 * S}


def lasso_brute_force(X, y, lam):
    """Exact lasso minimum by enumerating active sets and sign patterns.

    Objective ``|y - Xg|^2/n + 2 lam |g|_1``; feasible only for small m.
    """
    n, m = X.shape
    G = X.T @ X / n
    c = X.T @ y / n

    def obj(g):
        r = y - X @ g
        return r @ r / n + 2 * lam * np.abs(g).sum()

    best_g = np.zeros(m)
    best = obj(best_g)
    for k in range(1, m + 1):
        for S in itertools.combinations(range(m), k):
            S = list(S)
            for signs in itertools.product([-1.0, 1.0], repeat=k):
                s = np.array(signs)
                try:
                    gs = np.linalg.solve(G[np.ix_(S, S)], c[S] - lam * s)
                except np.linalg.LinAlgError:
                    continue
                if np.all(np.sign(gs) == s):
                    g = np.zeros(m)
                    g[S] = gs
                    v = obj(g)
                    if v < best:
                        best, best_g = v, g
    return best_g, best


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def kkt_violation(X, y, g, lam):
    """Largest breach of the lasso optimality conditions."""
    n = X.shape[0]
    grad = X.T @ (y - X @ g) / n
    active = g != 0
    v_active = np.abs(grad[active] - lam * np.sign(g[active]))
    v_inactive = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(max(v_active.max(initial=0.0), v_inactive.max(initial=0.0)))


def markowitz_kkt(Sigma, mu, rho):
    """Solve min w'Sw s.t. 1'w = 1, mu'w = rho via the bordered KKT system."""
    p = len(mu)
    ones = np.ones(p)
    K = np.zeros((p + 2, p + 2))
    K[:p, :p] = 2 * Sigma
    K[:p, p] = ones
    K[:p, p + 1] = mu
    K[p, :p] = ones
    K[p + 1, :p] = mu
    rhs = np.concatenate([np.zeros(p), [1.0, rho]])
    return np.linalg.solve(K, rhs)[:p]


def net_return_hand(gross, turnover, c):
    return gross - c * (1 + gross) * turnover
