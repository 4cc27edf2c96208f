import numpy as np
import pytest

from diamondlab.config import Settings
from diamondlab.core.disorder import DisorderField, DisorderSpec
from diamondlab.core.lattice import LatticeParams


class ZeroField(DisorderField):
    """A disorder field with ω ≡ 0."""

    def values(self, generation, start=0, stop=None):
        total = self.count(generation)
        stop = total if stop is None else stop
        return np.zeros(stop - start)


@pytest.fixture
def settings(tmp_path):
    return Settings(results_dir=str(tmp_path / "results"), pool_size=5_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def gaussian():
    return DisorderSpec.gaussian()


@pytest.fixture
def rademacher():
    return DisorderSpec.rademacher()


@pytest.fixture
def diamond():
    return LatticeParams(2, 2)


@pytest.fixture
def thin():
    """b < s"""
    return LatticeParams(2, 3)


@pytest.fixture
def wide():
    """b > s"""
    return LatticeParams(3, 2)
