import time

import numpy as np
import pytest

from multifuse.engine import SearchEngine
from multifuse.evaluation import SyntheticSpec, generate_synthetic_catalog
from multifuse.fusion import FusionMode
from multifuse.hnsw import HnswIndex, HnswParams

# Seeds for the 10k Gaussian benchmark, fixed once up front.
GAUSS_DATA_SEED = 42
GAUSS_QUERY_SEED = 43
GAUSS_N, GAUSS_DIM, GAUSS_QUERIES = 10_000, 64, 100


@pytest.fixture(scope="session")
def gaussian_data():
    data = np.random.default_rng(GAUSS_DATA_SEED).standard_normal((GAUSS_N, GAUSS_DIM))
    queries = np.random.default_rng(GAUSS_QUERY_SEED).standard_normal((GAUSS_QUERIES, GAUSS_DIM))
    return data, queries


@pytest.fixture(scope="session")
def gaussian_build(gaussian_data):
    """Default-parameter index over the 10k Gaussian set, with its build time in seconds."""
    data, _ = gaussian_data
    t0 = time.perf_counter()
    index = HnswIndex(GAUSS_DIM, HnswParams(), capacity=GAUSS_N)
    index.add_items(range(GAUSS_N), data)
    return index, time.perf_counter() - t0


@pytest.fixture(scope="session")
def gaussian_index(gaussian_build):
    return gaussian_build[0]


@pytest.fixture(scope="session")
def gaussian_truth(gaussian_index, gaussian_data):
    _, queries = gaussian_data
    return [[h.id for h in gaussian_index.brute_force(q, 10)] for q in queries]


def _recall(index, queries, truth, ef, k=10):
    total = 0.0
    for q, expected in zip(queries, truth):
        found = {h.id for h in index.search(q, k, ef=ef)}
        total += len(found & set(expected[:k])) / k
    return total / len(truth)


@pytest.fixture(scope="session")
def recall_against():
    return _recall


@pytest.fixture(scope="session")
def synth_1k():
    return generate_synthetic_catalog(SyntheticSpec(n_items=1000, n_classes=10, image_dim=32, seed=11))


@pytest.fixture(scope="session")
def textvec_engine_1k(synth_1k):
    return SearchEngine.build(synth_1k.items, synth_1k.config(FusionMode.TEXTVEC, weight=0.5))


# acceptance summary ----------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
