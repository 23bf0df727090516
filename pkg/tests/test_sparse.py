"""Sparse-coding solver against independent oracles.

The coordinate-descent oracle below implements the same L1 least-squares
problem by cycling exact single-coordinate minimizations; it shares no code
with the ISTA path it checks.
"""

import numpy as np
import pytest

from milspect.sparse import (
    IstaConfig,
    ista_step_length,
    lasso_objective,
    soft_threshold,
    solve_lasso,
    solve_lasso_batch,
)


def cd_lasso(x, D, lam, iters=20000, tol=1e-14):
    """Coordinate-descent oracle: exact minimization one coordinate at a time."""
    m = D.shape[1]
    a = np.zeros(m)
    col_sq = np.einsum("ij,ij->j", D, D)
    r = x.copy()
    for _ in range(iters):
        biggest = 0.0
        for k in range(m):
            old = a[k]
            rho = D[:, k] @ r + col_sq[k] * old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[k]
            if new != old:
                r -= (new - old) * D[:, k]
                a[k] = new
                biggest = max(biggest, abs(new - old))
        if biggest < tol:
            break
    return a


class TestSoftThreshold:
    def test_below_threshold_zeroes(self):
        np.testing.assert_allclose(soft_threshold(np.array([0.3]), 0.5), [0.0])

    def test_sign_preserved_and_shrunk(self):
        np.testing.assert_allclose(soft_threshold(np.array([-1.2]), 0.5), [-0.7])

    def test_zero_threshold_is_identity(self):
        v = np.array([2.0, -0.1, 0.0])
        np.testing.assert_allclose(soft_threshold(v, 0.0), v)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold(np.array([1.0]), -0.1)


class TestStepLength:
    def test_identity(self):
        assert ista_step_length(np.eye(2)) == pytest.approx(1.0, abs=1e-10)

    def test_diagonal(self):
        assert ista_step_length(np.diag([2.0, 1.0])) == pytest.approx(0.25, abs=1e-10)

    def test_matches_dense_eigensolver(self, rng):
        for _ in range(10):
            D = rng.standard_normal((5, 3))
            expected = 1.0 / np.linalg.eigvalsh(D.T @ D)[-1]
            assert ista_step_length(D) == pytest.approx(expected, rel=1e-8)

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError):
            ista_step_length(np.zeros((3, 2)))


class TestSolveLasso:
    def test_zero_input_gives_zero_code(self, rng):
        D = rng.standard_normal((6, 4))
        a = solve_lasso(np.zeros(6), D, 0.1)
        np.testing.assert_array_equal(a, np.zeros(4))

    def test_orthonormal_closed_form(self):
        # for orthonormal D the lasso solution is the soft threshold of D^T x
        a = solve_lasso(np.array([1.0, 0.05]), np.eye(2), 0.1)
        np.testing.assert_allclose(a, [0.9, 0.0], atol=1e-9)

    def test_matches_coordinate_descent_oracle(self, rng):
        cfg = IstaConfig(max_iters=5000, tolerance=1e-10)
        for _ in range(5):
            D = rng.standard_normal((6, 4))
            D /= np.linalg.norm(D, axis=0)
            x = rng.standard_normal(6)
            a = solve_lasso(x, D, 0.01, cfg)
            a_cd = cd_lasso(x, D, 0.01)
            assert lasso_objective(x, D, a, 0.01) == pytest.approx(
                lasso_objective(x, D, a_cd, 0.01), abs=1e-6
            )

    def test_objective_monotone_nonincreasing(self, rng):
        for _ in range(100):
            d = int(rng.integers(3, 9))
            m = int(rng.integers(2, 7))
            D = rng.standard_normal((d, m))
            x = rng.standard_normal(d)
            lam = float(rng.uniform(0.0, 0.3))
            history = []
            solve_lasso(x, D, lam, IstaConfig(max_iters=120, tolerance=0.0), history)
            diffs = np.diff(history)
            assert np.all(diffs <= 1e-10 * np.maximum(1.0, np.abs(history[:-1])))

    def test_optimality_certificate_at_convergence(self, rng):
        tol = 1e-10
        cfg = IstaConfig(max_iters=20000, tolerance=tol)
        for _ in range(10):
            D = rng.standard_normal((8, 5))
            D /= np.linalg.norm(D, axis=0)
            x = rng.standard_normal(8)
            lam = 0.05
            a = solve_lasso(x, D, lam, cfg)
            g = D.T @ (x - D @ a)
            # stationarity of the solved problem, at solver resolution
            slack = 10 * np.sqrt(tol)
            nonzero = a != 0
            if nonzero.any():
                assert np.max(np.abs(g[nonzero] - lam * np.sign(a[nonzero]))) < slack
            if (~nonzero).any():
                assert np.max(np.abs(g[~nonzero])) <= lam + slack

    def test_zero_weight_reduces_to_least_squares(self, rng):
        D = rng.standard_normal((8, 4))  # full column rank a.s.
        x = rng.standard_normal(8)
        a = solve_lasso(x, D, 0.0, IstaConfig(max_iters=50000, tolerance=1e-13))
        residual_grad = D.T @ (x - D @ a)
        assert np.max(np.abs(residual_grad)) < 1e-8

    def test_dimension_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            solve_lasso(np.zeros(3), rng.standard_normal((4, 2)), 0.1)


class TestSolveLassoBatch:
    def test_matches_per_column_solves(self, rng):
        D = rng.standard_normal((10, 5))
        D /= np.linalg.norm(D, axis=0)
        X = rng.standard_normal((10, 30))
        cfg = IstaConfig(max_iters=400, tolerance=1e-9)
        A = solve_lasso_batch(X, D, 0.02, cfg)
        for j in range(X.shape[1]):
            np.testing.assert_allclose(
                A[:, j], solve_lasso(X[:, j], D, 0.02, cfg), atol=1e-9
            )

    def test_empty_batch(self, rng):
        D = rng.standard_normal((4, 3))
        A = solve_lasso_batch(np.zeros((4, 0)), D, 0.1)
        assert A.shape == (3, 0)

    def test_step_override_used(self, rng):
        D = rng.standard_normal((5, 3))
        X = rng.standard_normal((5, 4))
        small = solve_lasso_batch(X, D, 0.1, IstaConfig(max_iters=1, tolerance=0.0,
                                                        step_override=1e-6))
        assert np.max(np.abs(small)) < 1e-3
