import numpy as np
import pytest

from voxelfill.errors import ConfigError
from voxelfill.phantom import PhantomSpec, synth_phantom


def test_deterministic():
    a = synth_phantom(PhantomSpec(seed=5), 2)
    b = synth_phantom(PhantomSpec(seed=5), 2)
    assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
    c = synth_phantom(PhantomSpec(seed=6), 2)
    assert c[0] != a[0]


def test_no_tumor_flag():
    _, _, unhealthy = synth_phantom(PhantomSpec(tumor=False))
    assert not unhealthy.masked.any()


def test_brain_inside_grid():
    t1n, brain, unhealthy = synth_phantom(PhantomSpec(dims=(20, 24, 16)))
    b = brain.masked
    assert b.sum() > 0
    assert not (b[0].any() or b[-1].any() or b[:, 0].any() or b[:, -1].any()
                or b[:, :, 0].any() or b[:, :, -1].any())
    assert np.all(t1n.voxels[b] > 0) and np.all(t1n.voxels[~b] == 0)
    assert not (unhealthy.masked & ~b).any()


def test_invalid_spec():
    with pytest.raises(ConfigError):
        PhantomSpec(dims=(8, 32, 32))
    with pytest.raises(ConfigError):
        PhantomSpec(noise=-1)
