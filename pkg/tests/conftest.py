import math

import numpy as np
import pytest

from torusgas.kernel import ModelParams
from torusgas.potential import PotentialSpec
from torusgas.grid import GridSpec, build_grid_chain


@pytest.fixture(scope="session")
def cosine_pot():
    return PotentialSpec("cosine", 1.0)


@pytest.fixture(scope="session")
def free_pot():
    return PotentialSpec("cosine", 0.0)


@pytest.fixture(scope="session")
def toy_grid(cosine_pot):
    """Small but fully functional surrogate chain at lam = 0.1."""
    spec = GridSpec(n_x=4, n_p=16, p_max=6.0, samples_per_cell=1200,
                    low_row_boost=30)
    return build_grid_chain(ModelParams(0.1), cosine_pot, spec,
                            seed=42).minorize()


def grid_spec_for(lam: float, n_x: int = 16, samples: int = 12000,
                  boost: int = 25) -> GridSpec:
    """Production-style spec with self-similar momentum truncation."""
    p_max = 2.8 / math.sqrt(lam)
    n_p = 2 * max(16, int(math.ceil(p_max / 0.37)))
    return GridSpec(n_x=n_x, n_p=n_p, p_max=p_max, samples_per_cell=samples,
                    low_row_boost=boost)
