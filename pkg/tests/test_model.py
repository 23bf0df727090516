import numpy as np
import pytest

from conftest import random_dataset, random_dictionary

from milspect.model import (
    Bag,
    BagDataset,
    ConceptDictionary,
    HyperParams,
    SparseCodes,
    spectral_angle,
    validate_dataset,
)


class TestValidateDataset:
    def test_well_formed(self, rng):
        ds = random_dataset(rng, n_pos_bags=2, n_neg_bags=1)
        assert validate_dataset(ds) == []

    def test_dimension_mismatch_reported(self, rng):
        bags = (
            Bag("a", 1, rng.uniform(size=(3, 4))),
            Bag("b", 0, rng.uniform(size=(3, 5))),
        )
        problems = validate_dataset(BagDataset(bags))
        assert len(problems) == 1
        assert "dimension mismatch" in problems[0] and "'b'" in problems[0]

    def test_missing_negative_bags_reported(self, rng):
        bags = (Bag("a", 1, rng.uniform(size=(3, 4))),)
        problems = validate_dataset(BagDataset(bags))
        assert problems == ["no negative bags"]

    def test_missing_positive_bags_reported(self, rng):
        bags = (Bag("a", 0, rng.uniform(size=(3, 4))),)
        assert validate_dataset(BagDataset(bags)) == ["no positive bags"]

    def test_nonfinite_reported(self, rng):
        bad = rng.uniform(size=(3, 4))
        bad[1, 2] = np.nan
        bags = (Bag("a", 1, bad), Bag("b", 0, rng.uniform(size=(2, 4))))
        problems = validate_dataset(BagDataset(bags))
        assert any("non-finite" in p for p in problems)

    def test_instance_bookkeeping_partition(self, rng):
        # instances split exactly into positive-bag and negative-bag counts
        for _ in range(20):
            n_pos = int(rng.integers(1, 4))
            n_neg = int(rng.integers(1, 4))
            bags = []
            for i in range(n_pos + n_neg):
                n_i = int(rng.integers(1, 7))
                bags.append(Bag(str(i), int(i < n_pos), rng.uniform(size=(n_i, 3))))
            ds = BagDataset(tuple(bags))
            assert validate_dataset(ds) == []
            n_from_pos = sum(b.n_instances for b in ds.bags if b.is_positive)
            n_from_neg = sum(b.n_instances for b in ds.bags if not b.is_positive)
            assert n_from_pos + n_from_neg == ds.n_instances
            assert len(ds.positive_columns) == n_from_pos
            assert len(ds.negative_columns) == n_from_neg


class TestBagDataset:
    def test_stacking_matches_bag_order(self, rng):
        ds = random_dataset(rng, d=4, n_pos_bags=1, n_neg_bags=1, bag_size=3)
        np.testing.assert_array_equal(
            ds.instance_matrix[:, ds.bag_slices[1]], ds.bags[1].instances.T
        )

    def test_inconsistent_dataset_stacking_raises(self, rng):
        ds = BagDataset((
            Bag("a", 1, rng.uniform(size=(3, 4))),
            Bag("b", 0, rng.uniform(size=(3, 5))),
        ))
        with pytest.raises(ValueError):
            _ = ds.instance_matrix

    def test_instances_are_read_only(self, rng):
        ds = random_dataset(rng)
        with pytest.raises(ValueError):
            ds.bags[0].instances[0, 0] = 7.0


class TestConceptDictionary:
    def test_full_concatenation_and_counts(self, rng):
        D = random_dictionary(rng, d=6, T=2, M=3)
        assert D.full.shape == (6, 5)
        np.testing.assert_array_equal(D.full[:, :2], D.targets)
        np.testing.assert_array_equal(D.full[:, 2:], D.backgrounds)

    def test_normalized_unit_columns(self, rng):
        targets = 3.0 * rng.standard_normal((5, 2))
        backgrounds = 0.2 * rng.standard_normal((5, 3))
        D = ConceptDictionary(targets, backgrounds).normalized()
        np.testing.assert_allclose(D.column_norms(), 1.0, atol=1e-12)

    def test_with_target_replaces_one_column(self, rng):
        D = random_dictionary(rng, d=4, T=2, M=2)
        v = rng.standard_normal(4)
        D2 = D.with_target(1, v)
        np.testing.assert_array_equal(D2.targets[:, 1], v)
        np.testing.assert_array_equal(D2.targets[:, 0], D.targets[:, 0])
        np.testing.assert_array_equal(D2.backgrounds, D.backgrounds)

    def test_mismatched_dims_rejected(self, rng):
        with pytest.raises(ValueError):
            ConceptDictionary(rng.standard_normal((4, 1)), rng.standard_normal((5, 1)))


class TestHyperParams:
    def test_valid_defaults_pass(self):
        HyperParams(T=1, M=2, rho=0.5, b=5.0, beta=2.0, lam=1e-3).validate()

    def test_zero_exponent_rejected(self):
        hp = HyperParams(T=1, M=2, rho=0.5, b=0.0, beta=2.0, lam=1e-3)
        with pytest.raises(ValueError, match="b must be nonzero"):
            hp.validate()

    @pytest.mark.parametrize("field,value", [
        ("beta", 0.0), ("lam", -1e-3), ("rho", -0.1), ("T", 0), ("M", 0),
        ("ista_iters", 0), ("background_init", "pca"),
    ])
    def test_invalid_values_rejected(self, field, value):
        kwargs = dict(T=1, M=2, rho=0.5, b=5.0, beta=2.0, lam=1e-3)
        kwargs[field] = value
        with pytest.raises(ValueError):
            HyperParams(**kwargs).validate()

    def test_large_negative_scaling_warns(self):
        hp = HyperParams(T=1, M=2, rho=1.5, b=5.0, beta=2.0, lam=1e-3)
        with pytest.warns(UserWarning, match="rho"):
            hp.validate()


class TestSparseCodes:
    def test_residuals_match_definition_exactly(self, rng):
        D = random_dictionary(rng, d=6, T=2, M=3)
        x = rng.standard_normal(6)
        full = rng.standard_normal(5)
        background = rng.standard_normal(3)
        codes = SparseCodes.from_solution(x, D, full, background)
        np.testing.assert_array_equal(codes.residual_full, x - D.full @ full)
        np.testing.assert_array_equal(
            codes.residual_background, x - D.backgrounds @ background
        )
        np.testing.assert_array_equal(codes.target_part, full[:2])
        np.testing.assert_array_equal(codes.background_part, full[2:])


class TestSpectralAngle:
    def test_scale_invariant(self, rng):
        u = rng.uniform(size=8)
        v = rng.uniform(size=8)
        assert spectral_angle(u, v) == pytest.approx(spectral_angle(3 * u, 0.5 * v))

    def test_identical_is_zero_orthogonal_is_ninety(self):
        assert spectral_angle([1, 0], [1, 0]) == pytest.approx(0.0)
        assert spectral_angle([1, 0], [0, 1]) == pytest.approx(90.0)
