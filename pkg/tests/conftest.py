import numpy as np
import pytest

from milspect.model import Bag, BagDataset, ConceptDictionary, HyperParams


def random_dataset(rng, d=5, n_pos_bags=2, n_neg_bags=1, bag_size=6, low=0.1, high=1.0):
    """Small well-formed dataset with positive-valued features."""
    bags = []
    for i in range(n_pos_bags):
        bags.append(Bag(f"pos{i}", 1, rng.uniform(low, high, size=(bag_size, d))))
    for i in range(n_neg_bags):
        bags.append(Bag(f"neg{i}", 0, rng.uniform(low, high, size=(bag_size, d))))
    return BagDataset(tuple(bags))


def random_dictionary(rng, d=5, T=1, M=2):
    targets = rng.standard_normal((d, T))
    backgrounds = rng.standard_normal((d, M))
    targets /= np.linalg.norm(targets, axis=0)
    backgrounds /= np.linalg.norm(backgrounds, axis=0)
    return ConceptDictionary(targets, backgrounds)


def toy_hyperparams(T=1, M=2, **overrides):
    defaults = dict(T=T, M=M, rho=0.7, b=5.0, beta=2.0, lam=1e-3, alpha_incoh=1.3,
                    max_outer_iters=5, seed=0)
    defaults.update(overrides)
    return HyperParams(**defaults)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
