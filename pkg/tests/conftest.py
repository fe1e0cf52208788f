import numpy as np
import pytest

from privsgd.geometry import Box, L2Ball
from privsgd.losses import GeneratorKind, LossKind, PopulationSpec, draw_dataset, make_oracle


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ball2():
    return L2Ball(radius=0.5, dimension=2)


@pytest.fixture
def box3():
    return Box(lower=[-1.0, -0.5, 0.0], upper=[1.0, 0.5, 2.0])


@pytest.fixture
def margin_population():
    return PopulationSpec(GeneratorKind.LINEAR_MARGIN, dimension=2, w_true=[1.0, 0.0])


@pytest.fixture
def hinge():
    return make_oracle(LossKind.HINGE, feature_bound=1.0)


@pytest.fixture
def small_dataset(margin_population, rng):
    return draw_dataset(margin_population, 32, rng)
