"""Objective, hybrid statistic, and gradient checks.

Two independent oracles guard the main path: a straight-line loop
re-implementation of the full objective (no shared code with the vectorized
evaluation), and frozen-code central finite differences for both atom
gradients, which is the property the closed-form derivations must satisfy.
"""

import numpy as np
import pytest

from conftest import random_dataset, random_dictionary, toy_hyperparams

from milspect.model import Bag, BagDataset, ConceptDictionary, SparseCodes
from milspect.objective import (
    CodeSet,
    DegenerateBackgroundError,
    evaluate_objective,
    generalized_mean,
    grad_background_atom,
    grad_target_atom,
    hybrid_statistic,
)
from milspect.trainer import solve_codes


def reference_objective(ds, D, hp, codes):
    """Loop-by-loop transcription of the objective, used as an oracle."""
    gm = 0.0
    fidelity = 0.0
    incoherence = 0.0
    X = ds.instance_matrix
    for bag, cols in zip(ds.bags, ds.bag_slices):
        for j in range(bag.n_instances):
            col = cols.start + j
            x = X[:, col]
            a = codes.full[:, col]
            p = codes.background[:, col]
            r = x - D.full @ a
            q = x - D.backgrounds @ p
            if not bag.is_positive:
                fidelity += hp.rho * float(q @ q)
                recon = D.targets @ a[: D.n_targets]
                incoherence += 0.5 * hp.alpha_incoh * float(recon @ x) ** 2
        if bag.is_positive:
            lam_vals = []
            for j in range(bag.n_instances):
                col = cols.start + j
                x = X[:, col]
                r = x - D.full @ codes.full[:, col]
                q = x - D.backgrounds @ codes.background[:, col]
                lam_vals.append(np.exp(-hp.beta * (r @ r) / (q @ q)))
            gm -= np.log(np.mean(np.power(lam_vals, hp.b))) / hp.b
    return gm + fidelity + incoherence


def toy_problem(rng, d=4, T=1, M=2, bags=2, bag_size=5):
    ds = random_dataset(rng, d=d, n_pos_bags=(bags + 1) // 2,
                        n_neg_bags=bags - (bags + 1) // 2, bag_size=bag_size)
    D = random_dictionary(rng, d=d, T=T, M=M)
    return ds, D


class TestHybridStatistic:
    def test_perfect_reconstruction_gives_one(self, rng):
        D = random_dictionary(rng, d=4, T=1, M=2)
        x = D.full @ np.array([0.3, 0.2, 0.1])
        codes = SparseCodes.from_solution(x, D, np.array([0.3, 0.2, 0.1]),
                                          np.zeros(2))
        assert hybrid_statistic(x, D, codes, beta=5.0) == pytest.approx(1.0)

    def test_equal_residuals_give_exp_minus_beta(self, rng):
        # zero codes make both residuals equal to x itself
        D = random_dictionary(rng, d=4, T=1, M=2)
        x = rng.standard_normal(4)
        codes = SparseCodes.from_solution(x, D, np.zeros(3), np.zeros(2))
        assert hybrid_statistic(x, D, codes, beta=5.0) == pytest.approx(np.exp(-5.0))

    def test_matches_direct_evaluation(self, rng):
        D = random_dictionary(rng, d=5, T=1, M=2)
        x = rng.standard_normal(5)
        full = rng.standard_normal(3)
        background = rng.standard_normal(2)
        codes = SparseCodes.from_solution(x, D, full, background)
        r = x - D.full @ full
        q = x - D.backgrounds @ background
        expected = np.exp(-2.5 * (r @ r) / (q @ q))
        assert hybrid_statistic(x, D, codes, beta=2.5) == pytest.approx(expected, rel=1e-12)

    def test_degenerate_background_raises(self, rng):
        D = random_dictionary(rng, d=4, T=1, M=2)
        x = D.backgrounds @ np.array([0.5, -0.2])
        codes = SparseCodes.from_solution(x, D, np.zeros(3), np.array([0.5, -0.2]))
        with pytest.raises(DegenerateBackgroundError):
            hybrid_statistic(x, D, codes, beta=1.0)


class TestGeneralizedMean:
    def test_constant_values(self, rng):
        for b in (-10.0, -1.0, 0.5, 1.0, 7.0):
            assert generalized_mean([0.37] * 5, b) == pytest.approx(0.37, rel=1e-12)

    def test_b_one_is_arithmetic_mean(self):
        assert generalized_mean([0.2, 0.8], 1.0) == pytest.approx(0.5, rel=1e-12)

    def test_large_exponent_approaches_max(self):
        # high-precision direct evaluation of ((0.2^100 + 0.8^100)/2)^(1/100)
        assert generalized_mean([0.2, 0.8], 100.0) == pytest.approx(0.79447, abs=1e-5)

    def test_zero_exponent_rejected(self):
        with pytest.raises(ValueError):
            generalized_mean([0.5], 0.0)

    def test_bounded_and_monotone_in_exponent(self, rng):
        b_grid = [-10, -5, -2, -1, 1e-10, 1, 2, 5, 10, 20, 50, 100]
        for _ in range(50):
            values = rng.uniform(0.01, 1.0, size=int(rng.integers(2, 9)))
            means = [generalized_mean(values, b) for b in b_grid]
            assert all(values.min() - 1e-9 <= m <= values.max() + 1e-9 for m in means)
            assert all(m2 >= m1 - 1e-9 for m1, m2 in zip(means, means[1:]))


class TestEvaluateObjective:
    def test_perfect_positive_bag_scores_zero(self, rng):
        # every instance exactly reconstructed by the full dictionary but not
        # by the backgrounds: Lambda = 1 for all, and no negative instances
        D = random_dictionary(rng, d=4, T=2, M=1)
        coeffs = rng.uniform(0.5, 1.0, size=(3, 5))
        X = (D.full @ coeffs).T
        ds = BagDataset((Bag("p", 1, X), Bag("n", 0, X[:1])))
        hp = toy_hyperparams(T=2, M=1, rho=0.0, alpha_incoh=0.0)
        codes = CodeSet(full=np.column_stack([coeffs, coeffs[:, :1]]),
                        background=np.zeros((1, 6)))
        out = evaluate_objective(ds, D, hp, codes)
        assert out.gm_term == pytest.approx(0.0, abs=1e-12)
        assert out.total == pytest.approx(0.0, abs=1e-12)

    def test_terms_switch_off(self, rng):
        ds, D = toy_problem(rng)
        hp = toy_hyperparams(rho=0.0, alpha_incoh=0.0)
        codes = solve_codes(ds, D, hp, include_negative_full=True)
        out = evaluate_objective(ds, D, hp, codes)
        assert out.fidelity_term == 0.0
        assert out.incoherence_term == 0.0
        assert out.total == out.gm_term

    def test_total_is_sum_of_terms(self, rng):
        ds, D = toy_problem(rng, bags=3)
        hp = toy_hyperparams()
        codes = solve_codes(ds, D, hp)
        out = evaluate_objective(ds, D, hp, codes)
        assert out.total == out.gm_term + out.fidelity_term + out.incoherence_term

    def test_matches_straight_line_oracle(self, rng):
        for _ in range(5):
            ds, D = toy_problem(rng, d=4, T=1, M=2, bags=2, bag_size=5)
            hp = toy_hyperparams()
            codes = solve_codes(ds, D, hp)
            ours = evaluate_objective(ds, D, hp, codes).total
            assert ours == pytest.approx(reference_objective(ds, D, hp, codes), abs=1e-10)

    def test_single_instance_bag_identity(self, rng):
        # with one positive instance, the pooled term reduces to
        # beta * ||r||^2 / ||q||^2 regardless of the exponent
        D = random_dictionary(rng, d=4, T=1, M=2)
        x = rng.uniform(0.2, 1.0, size=4)
        ds = BagDataset((Bag("p", 1, x.reshape(1, -1)),
                         Bag("n", 0, rng.uniform(0.2, 1.0, size=(2, 4)))))
        hp = toy_hyperparams(rho=0.0, alpha_incoh=0.0, b=7.0, beta=3.0)
        codes = solve_codes(ds, D, hp, include_negative_full=True)
        sc = codes.instance(ds, D, 0)
        r2 = sc.residual_full @ sc.residual_full
        q2 = sc.residual_background @ sc.residual_background
        out = evaluate_objective(ds, D, hp, codes)
        assert out.gm_term == pytest.approx(3.0 * r2 / q2, rel=1e-12)

    def test_missing_negative_codes_rejected_when_needed(self, rng):
        ds, D = toy_problem(rng)
        hp = toy_hyperparams(alpha_incoh=0.5)
        codes = solve_codes(ds, D, hp, include_negative_full=False)
        with pytest.raises(ValueError, match="incoherence"):
            evaluate_objective(ds, D, hp, codes)


def finite_difference_gradient(ds, D, hp, codes, kind, index, h=1e-5):
    grad = np.zeros(D.d)
    for i in range(D.d):
        vals = []
        for sign in (1.0, -1.0):
            if kind == "target":
                col = D.targets[:, index].copy()
                col[i] += sign * h
                Dp = D.with_target(index, col)
            else:
                col = D.backgrounds[:, index].copy()
                col[i] += sign * h
                Dp = D.with_background(index, col)
            vals.append(evaluate_objective(ds, Dp, hp, codes).total)
        grad[i] = (vals[0] - vals[1]) / (2 * h)
    return grad


class TestGradients:
    def test_zero_target_coefficients_zero_gm_gradient(self, rng):
        ds, D = toy_problem(rng, T=1, M=2)
        hp = toy_hyperparams(alpha_incoh=0.0)
        codes = solve_codes(ds, D, hp, include_negative_full=True)
        silenced = CodeSet(
            full=np.vstack([np.zeros(ds.n_instances), codes.full[1:]]),
            background=codes.background,
        )
        np.testing.assert_allclose(grad_target_atom(0, ds, D, hp, silenced), 0.0)

    def test_gradients_match_finite_differences(self, rng):
        # the central property the closed-form derivations must satisfy
        for case in range(20):
            d = int(rng.integers(4, 11))
            T = int(rng.integers(1, 3))
            M = int(rng.integers(2, 4))
            bags = int(rng.integers(2, 5))
            ds, D = toy_problem(rng, d=d, T=T, M=M, bags=bags)
            hp = toy_hyperparams(T=T, M=M, b=float(rng.choice([-5.0, 1.0, 5.0])))
            codes = solve_codes(ds, D, hp)
            t = int(rng.integers(T))
            k = int(rng.integers(M))
            for kind, index, fn in (
                ("target", t, grad_target_atom),
                ("background", k, grad_background_atom),
            ):
                analytic = fn(index, ds, D, hp, codes)
                numeric = finite_difference_gradient(ds, D, hp, codes, kind, index)
                err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
                assert err < 1e-4, f"case {case}: {kind} gradient off by {err:.2e}"

    def test_target_gradient_without_incoherence_matches_oracle(self, rng):
        ds, D = toy_problem(rng, d=5, T=1, M=2, bags=2)
        hp = toy_hyperparams(alpha_incoh=0.0, beta=2.0, b=5.0)
        codes = solve_codes(ds, D, hp, include_negative_full=True)
        X = ds.instance_matrix
        expected = np.zeros(5)
        for bag, cols in zip(ds.bags, ds.bag_slices):
            if not bag.is_positive:
                continue
            lam_b, weighted = [], []
            for j in range(bag.n_instances):
                col = cols.start + j
                x = X[:, col]
                a = codes.full[:, col]
                r = x - D.full @ a
                q = x - D.backgrounds @ codes.background[:, col]
                lam = np.exp(-hp.beta * (r @ r) / (q @ q))
                lam_b.append(lam**hp.b)
                weighted.append(lam**hp.b * 2 * hp.beta * a[0] * r / (q @ q))
            expected -= np.sum(weighted, axis=0) / np.sum(lam_b)
        np.testing.assert_allclose(grad_target_atom(0, ds, D, hp, codes), expected,
                                   rtol=1e-10)

    def test_background_gradient_without_fidelity_matches_oracle(self, rng):
        ds, D = toy_problem(rng, d=5, T=1, M=2, bags=2)
        hp = toy_hyperparams(rho=0.0, beta=2.0, b=5.0, alpha_incoh=0.0)
        codes = solve_codes(ds, D, hp, include_negative_full=True)
        X = ds.instance_matrix
        k = 1
        expected = np.zeros(5)
        for bag, cols in zip(ds.bags, ds.bag_slices):
            if not bag.is_positive:
                continue
            lam_b, weighted = [], []
            for j in range(bag.n_instances):
                col = cols.start + j
                x = X[:, col]
                a = codes.full[:, col]
                p = codes.background[:, col]
                r = x - D.full @ a
                q = x - D.backgrounds @ p
                q2 = q @ q
                lam = np.exp(-hp.beta * (r @ r) / q2)
                lam_b.append(lam**hp.b)
                inner = (a[D.n_targets + k] * r * q2 - p[k] * (r @ r) * q) / q2**2
                weighted.append(lam**hp.b * 2 * hp.beta * inner)
            expected -= np.sum(weighted, axis=0) / np.sum(lam_b)
        np.testing.assert_allclose(grad_background_atom(k, ds, D, hp, codes), expected,
                                   rtol=1e-10)

    def test_index_bounds_checked(self, rng):
        ds, D = toy_problem(rng, T=1, M=2)
        hp = toy_hyperparams()
        codes = solve_codes(ds, D, hp)
        with pytest.raises(IndexError):
            grad_target_atom(1, ds, D, hp, codes)
        with pytest.raises(IndexError):
            grad_background_atom(2, ds, D, hp, codes)
