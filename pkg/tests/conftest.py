import dataclasses

import numpy as np
import pytest

from starv2x.params import default_params


@pytest.fixture
def params():
    return default_params()


@pytest.fixture
def tiny_params():
    """Small topology for fast environment/harness tests."""
    return dataclasses.replace(
        default_params(),
        n_vues_i=2, n_v2v_pairs_v=1, n_antennas_b=2,
        n_elements=4, element_groups=2, steps_per_episode=4,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
