import numpy as np
import pytest

from realrss.runtime import Cluster


@pytest.fixture
def cluster():
    cl = Cluster.inprocess(seeds=[11, 22, 33])
    yield cl
    cl.close()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
