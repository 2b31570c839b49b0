import numpy as np
import pytest

from cpt.data import SbmSpec, generate_sbm
from cpt.graph import Graph


def random_graph(rng, n, p=0.3, d=4, n_classes=3):
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.size) < p
    labels = rng.integers(0, n_classes, size=n)
    return Graph(n, np.stack([iu[mask], ju[mask]], axis=1), rng.standard_normal((n, d)), labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sbm_graph():
    return generate_sbm(SbmSpec(12, 50, 0.2, 0.01, feature_dim=16, feature_noise=1.0, seed=3))
