import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from tanet import backend

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

settings.register_profile("ci", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("ci")


@pytest.fixture(autouse=True)
def float64_default():
    """Tests run at double precision unless they opt out explicitly."""
    prev = backend.default_dtype()
    backend.set_default_dtype(np.float64)
    yield
    backend.set_default_dtype(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
