import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covlab.data import SyntheticMarketSpec, generate_synthetic
from covlab.errors import EstimationError
from covlab.linalg import symmetrize
from covlab.nodewise import (
    default_grid,
    gic_select,
    lambda_max,
    lasso,
    nodewise_precision,
    nodewise_row,
    residual_nodewise_precision,
)
from oracles import kkt_violation, lasso_brute_force, soft_threshold


def _orthonormal_design(rng, n, m):
    q, _ = np.linalg.qr(rng.standard_normal((n, m)))
    return q * np.sqrt(n)  # X'X/n = I


class TestLasso:
    def test_kill_zone(self, rng):
        X = rng.standard_normal((40, 5))
        y = rng.standard_normal(40)
        lmax = lambda_max(X, y)
        for lam in (lmax, 1.5 * lmax):
            sol = lasso(X, y, lam)
            assert np.all(sol.coefficients == 0) and sol.active_set.size == 0

    def test_just_below_kill_zone_activates(self, rng):
        X = rng.standard_normal((40, 5))
        y = rng.standard_normal(40)
        assert lasso(X, y, 0.9 * lambda_max(X, y)).active_set.size >= 1

    def test_orthonormal_soft_threshold(self, rng):
        X = _orthonormal_design(rng, 60, 6)
        y = X @ np.array([1.0, -0.5, 0.1, 0.0, 2.0, -0.05]) + 0.3 * rng.standard_normal(60)
        ols = X.T @ y / 60
        for lam in (0.0, 0.07, 0.3, 1.0):
            np.testing.assert_allclose(lasso(X, y, lam).coefficients, soft_threshold(ols, lam), atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((50, 3))
        y = X @ np.array([0.8, 0.0, -0.3]) + rng.standard_normal(50)
        lam = 0.2 * lambda_max(X, y)
        _, best = lasso_brute_force(X, y, lam)
        assert lasso(X, y, lam).objective == pytest.approx(best, abs=1e-6)

    def test_kkt(self, rng):
        X = rng.standard_normal((80, 12))
        X[:, 3] = X[:, 2] + 0.5 * rng.standard_normal(80)
        y = X[:, :4] @ np.ones(4) + rng.standard_normal(80)
        for frac in (0.5, 0.1, 0.02):
            lam = frac * lambda_max(X, y)
            sol = lasso(X, y, lam)
            assert sol.converged
            assert kkt_violation(X, y, sol.coefficients, lam) <= 1e-6

    def test_sweep_cap_is_flagged(self, rng):
        X = rng.standard_normal((80, 4))
        X[:, 1] = X[:, 0] + 1e-3 * rng.standard_normal(80)
        y = X[:, 0] + rng.standard_normal(80)
        sol = lasso(X, y, 1e-4, max_sweeps=5)
        assert sol.n_sweeps == 5 and not sol.converged

    def test_negative_lambda(self, rng):
        with pytest.raises(ValueError):
            lasso(rng.standard_normal((5, 2)), rng.standard_normal(5), -1.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), frac=st.floats(0.01, 0.9))
    def test_objective_nonincreasing_per_sweep(self, seed, frac):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((30, 8)) @ (np.eye(8) + 0.5)
        y = rng.standard_normal(30)
        sol = lasso(X, y, frac * lambda_max(X, y))
        h = sol.history
        assert h.size == sol.n_sweeps and h.size >= 1
        assert np.all(np.diff(h) <= 1e-12 * max(1.0, abs(h[0])))
        assert h[-1] == pytest.approx(sol.objective, rel=1e-10, abs=1e-12)

    def test_deterministic(self, rng):
        X = rng.standard_normal((30, 6))
        y = rng.standard_normal(30)
        a, b = lasso(X, y, 0.05), lasso(X, y, 0.05)
        np.testing.assert_array_equal(a.coefficients, b.coefficients)


class TestGIC:
    def test_singleton_grid(self, rng):
        X = rng.standard_normal((30, 4))
        y = rng.standard_normal(30)
        lam, sol = gic_select(X, y, grid=[0.123])
        assert lam == 0.123 and sol.lam == 0.123

    def test_pure_noise_selects_empty_model(self):
        # 50 seeds has a binomial sd near 3.5 points at this rate; 500 pins it down
        empty = 0
        for seed in range(500):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((200, 20))
            y = rng.standard_normal(200)
            _, sol = gic_select(X, y, grid=default_grid(lambda_max(X, y)), p_total=21)
            empty += sol.active_set.size == 0
        assert empty >= 450

    def test_exact_multiple_of_one_column(self, rng):
        X = rng.standard_normal((100, 6))
        _, sol = gic_select(X, 2 * X[:, 0])
        np.testing.assert_array_equal(sol.active_set, [0])

    def test_ties_go_to_larger_penalty(self, rng):
        X = rng.standard_normal((50, 3))
        y = rng.standard_normal(50)
        lmax = lambda_max(X, y)
        lam, _ = gic_select(X, y, grid=[2 * lmax, 3 * lmax, 1.5 * lmax])
        assert lam == 3 * lmax

    def test_residual_variant_and_unknown(self, rng):
        X = rng.standard_normal((50, 3))
        y = X[:, 1] + 0.1 * rng.standard_normal(50)
        _, sol = gic_select(X, y, variant="residual")
        assert 1 in sol.active_set
        with pytest.raises(ValueError):
            gic_select(X, y, variant="bic")

    def test_perfect_fit_point_is_not_an_error(self, rng):
        X = rng.standard_normal((20, 3))
        lam, sol = gic_select(X, X @ np.array([1.0, 2.0, 3.0]), grid=[0.0, 0.5])
        assert lam == 0.5


def _banded(p, n, seed):
    r, _, _, prec = generate_synthetic(SyntheticMarketSpec(
        p=p, T=n, K=1, loading_scale=0.0, error_structure="banded-precision", seed=seed))
    return r.values - r.values.mean(axis=0), prec


class TestNodewise:
    def test_independent_columns(self):
        Y = np.random.default_rng(0).standard_normal((1000, 10))
        theta = nodewise_precision(Y).precision
        off = ~np.eye(10, dtype=bool)
        assert np.max(np.abs(theta[off])) <= 0.05

    def test_banded_support(self):
        Y, prec = _banded(15, 2000, 1)
        theta = nodewise_precision(Y).precision
        off = ~np.eye(15, dtype=bool)
        truth = (np.abs(prec) > 1e-12) & off
        found = (theta != 0) & off
        assert (found & truth).sum() >= 0.9 * truth.sum()
        assert (found & ~truth & off).sum() <= 0.1 * (~truth & off).sum()

    def test_uncorrelated_pair(self):
        rng = np.random.default_rng(3)
        Y = rng.standard_normal((500, 2)) * [0.5, 2.0]
        Y -= Y.mean(axis=0)
        theta = nodewise_precision(Y).precision
        s2 = Y.var(axis=0)
        np.testing.assert_allclose(np.diag(theta), 1 / s2, rtol=0.1)
        assert abs(theta[0, 1]) <= 0.1 * np.sqrt(theta[0, 0] * theta[1, 1])

    def test_large_sample_converges(self):
        cov = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]])
        Y = np.random.default_rng(7).multivariate_normal(np.zeros(3), cov, size=100_000)
        truth = np.linalg.inv(cov)
        theta = nodewise_precision(Y).precision
        assert np.max(np.abs(theta - truth)) <= 0.02 * np.max(np.abs(truth))

    def test_symmetrized_exactly(self, rng):
        Y = rng.standard_normal((60, 6)) @ (np.eye(6) + 0.3)
        theta = nodewise_precision(Y).precision
        np.testing.assert_array_equal(theta, theta.T)
        np.testing.assert_array_equal(symmetrize(theta), theta)

    def test_zero_variance_names_asset(self, rng):
        Y = rng.standard_normal((30, 3))
        Y[:, 1] = 0.0
        with pytest.raises(EstimationError, match="asset B has zero variance"):
            nodewise_precision(Y, asset_names=["A", "B", "C"])

    def test_scaling(self, rng):
        Y = rng.standard_normal((80, 5)) @ (np.eye(5) + 0.4)
        Y -= Y.mean(axis=0)
        grid = default_grid(0.5, 20)
        a = nodewise_precision(Y, grid=grid).precision
        b = nodewise_precision(2 * Y, grid=4 * grid).precision
        np.testing.assert_allclose(b, a / 4, rtol=1e-6, atol=1e-12)

    def test_row_form(self, rng):
        Y = rng.standard_normal((50, 4))
        row = nodewise_row(Y, 2, 0.05)
        assert row.tau_sq > 0
        assert row.row[2] == 1.0 / row.tau_sq

    def test_tuning_records_row_penalties(self, rng):
        est = nodewise_precision(rng.standard_normal((40, 5)))
        assert est.tuning["lambda"].shape == (5,)
        assert np.all(est.tuning["tau_sq"] > 0)


class TestResidualNodewise:
    def test_zero_loadings_collapse(self):
        rng = np.random.default_rng(2)
        Y = rng.standard_normal((400, 8)) * 0.05
        Y -= Y.mean(axis=0)
        X = rng.standard_normal((1, 400))
        X -= X.mean()
        est = residual_nodewise_precision(Y, X)
        lam = est.tuning["lambda"]
        U = Y - X.T @ np.linalg.solve(X @ X.T, X @ Y)
        omega = np.zeros((8, 8))
        for j in range(8):
            rest = np.arange(8) != j
            g = lasso(U[:, rest], U[:, j], lam).coefficients
            t2 = U[:, j] @ (U[:, j] - U[:, rest] @ g) / 400
            omega[j, j] = 1 / t2
            omega[j, rest] = -g / t2
        omega = symmetrize(omega)
        assert np.max(np.abs(est.precision - omega)) <= 0.02 * np.max(np.abs(omega))

    def test_two_factor_recovery(self):
        r, f, _, prec = generate_synthetic(SyntheticMarketSpec(p=20, T=1000, K=2, seed=4))
        Y = r.values - r.values.mean(axis=0)
        X = (f.values - f.values.mean(axis=0)).T
        gamma = residual_nodewise_precision(Y, X).precision
        assert np.max(np.abs(gamma - prec)) <= 0.1 * np.max(np.abs(prec))
        np.testing.assert_array_equal(gamma, gamma.T)

    def test_duplicate_factors(self, rng):
        x = rng.standard_normal(50)
        with pytest.raises(EstimationError, match="condition number"):
            residual_nodewise_precision(rng.standard_normal((50, 4)), np.vstack([x, x]))
