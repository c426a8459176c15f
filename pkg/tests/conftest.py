import logging

import numpy as np
import pytest

from core.tensor_core import DenseTensor
from engine.synth_data import SynthSpec, method1
from observability.logging import PACKAGES


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    cache = tmp_path / "basis-cache"
    monkeypatch.setenv("MLRTG_CACHE_DIR", str(cache))
    return cache


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_tensor(rng):
    return DenseTensor(rng.standard_normal((4, 5, 6)))


@pytest.fixture(scope="session")
def mlrtg_3d():
    """Exact low-rank tensor on graphs: shape 30x25x20, four eigenvectors per mode."""
    spec = SynthSpec(shape=(30, 25, 20), core_ranks=4, k_nn=5, seed=3)
    return method1(spec)


@pytest.fixture(scope="session")
def mlrtg_2d():
    spec = SynthSpec(shape=(40, 36), core_ranks=12, signal_rank=4, k_nn=6, seed=11)
    return method1(spec)


@pytest.fixture
def orthonormal(rng):
    def make(n, k):
        q, _ = np.linalg.qr(rng.standard_normal((n, k)))
        return q
    return make


@pytest.fixture(autouse=True)
def reset_package_loggers():
    yield
    for name in PACKAGES:
        pkg_logger = logging.getLogger(name)
        pkg_logger.handlers = []
        pkg_logger.setLevel(logging.NOTSET)
