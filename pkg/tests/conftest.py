import math

import numpy as np
import pytest

from emlocate.dictionary import build_dictionary
from emlocate.farfield import IncidentWave
from emlocate.sph import lebedev_rule


@pytest.fixture(scope="session")
def rule():
    return lebedev_rule(590)


@pytest.fixture(scope="session")
def small_rule():
    return lebedev_rule(110)


@pytest.fixture(scope="session")
def wave():
    return IncidentWave(1.0, (1.0, 0.0, 0.0), (0.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def pk_dictionary(rule, wave):
    """Kite and peanut at unit scale, every pi/4 about x3, k = 1."""
    return build_dictionary(["kite", "peanut"], math.pi / 4, [1.0], wave, rule)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
