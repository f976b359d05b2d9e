import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from oracles import load  # noqa: E402


@pytest.fixture(scope="session")
def frozen():
    return load()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
