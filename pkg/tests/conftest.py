import numpy as np
import pytest

from voxelfill.augment import MaskGenParams, generate_healthy_mask
from voxelfill.phantom import PhantomSpec, synth_phantom
from voxelfill.rng import stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def phantom():
    """(t1n, brain, unhealthy) for the default 32^3 tumored phantom."""
    return synth_phantom(PhantomSpec(dims=(32, 32, 32), seed=0))


@pytest.fixture(scope="session")
def healthy_mask(phantom):
    _, brain, unhealthy = phantom
    return generate_healthy_mask(brain, unhealthy, MaskGenParams(), stream(0, "maskgen", 0, 0))
