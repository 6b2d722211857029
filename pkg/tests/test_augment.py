import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxelfill.augment import (
    NEAREST,
    TRILINEAR,
    AugmentSpec,
    MaskGenParams,
    apply_mirror,
    apply_rotation,
    build_augmented_set,
    generate_healthy_mask,
    sample_augment,
)
from voxelfill.errors import ConfigError, MaskGenFailure
from voxelfill.rng import stream
from voxelfill.volume import LabelMask, Volume


def rot90_xy_oracle(a):
    n = a.shape[0]
    out = np.zeros_like(a)
    for x, y, z in np.ndindex(a.shape):
        out[n - 1 - y, x, z] = a[x, y, z]
    return out


def rot90_yz_oracle(a):
    n = a.shape[1]
    out = np.zeros_like(a)
    for x, y, z in np.ndindex(a.shape):
        out[x, n - 1 - z, y] = a[x, y, z]
    return out


def min_distance_to(region, targets):
    """Smallest Euclidean distance from any voxel of ``region`` to any target voxel."""
    a = np.argwhere(region).astype(float)
    b = np.argwhere(targets).astype(float)
    if len(a) == 0 or len(b) == 0:
        return np.inf
    best = np.inf
    for chunk in np.array_split(a, max(1, len(a) // 256)):
        d = np.sqrt(((chunk[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        best = min(best, d.min())
    return best


# -- mirroring -------------------------------------------------------------------

def test_mirror_identity_and_involution(rng):
    v = Volume(rng.standard_normal((5, 4, 3)))
    assert apply_mirror(v, (False, False, False)) == v
    for flags in [(True, False, False), (False, True, True), (True, True, True)]:
        assert apply_mirror(apply_mirror(v, flags), flags) == v
        m = LabelMask(rng.integers(0, 3, (5, 4, 3)))
        assert apply_mirror(apply_mirror(m, flags), flags) == m


def test_mirror_spike_index():
    a = np.zeros((5, 5, 5))
    a[0, 0, 0] = 1.0
    out = apply_mirror(Volume(a), (True, False, False)).voxels
    assert out[4, 0, 0] == 1.0 and out.sum() == 1.0


# -- rotation -------------------------------------------------------------------

def test_rotation_zero_and_full_turn(rng):
    v = Volume(rng.standard_normal((6, 5, 4)))
    for interp in (NEAREST, TRILINEAR):
        assert apply_rotation(v, 0, 0, interp) == v
        assert apply_rotation(v, 360.0, 0, interp) == v
        assert apply_rotation(v, 360.0, 720.0, interp) == v


def test_rotation_90_matches_permutation_oracle(rng):
    a = rng.integers(0, 3, (7, 7, 7)).astype(np.uint8)
    got = apply_rotation(LabelMask(a), 90.0, 0.0, NEAREST).labels
    np.testing.assert_array_equal(got, rot90_xy_oracle(a))
    got = apply_rotation(LabelMask(a), 0.0, 90.0, NEAREST).labels
    np.testing.assert_array_equal(got, rot90_yz_oracle(a))
    got = apply_rotation(LabelMask(a), 90.0, 90.0, NEAREST).labels
    np.testing.assert_array_equal(got, rot90_yz_oracle(rot90_xy_oracle(a)))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_quarter_turns_preserve_mask_volume(rng, k):
    a = (rng.random((9, 9, 9)) < 0.3).astype(np.uint8)
    out = apply_rotation(LabelMask(a), 90.0 * k, 90.0 * ((k + 1) % 4), NEAREST)
    assert out.labels.sum() == a.sum()


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 720), st.floats(-360, 360), st.integers(0, 2**31 - 1))
def test_nearest_rotation_creates_no_new_labels(txy, tyz, seed):
    a = np.random.default_rng(seed).choice([0, 2], size=(6, 7, 5)).astype(np.uint8)
    out = apply_rotation(LabelMask(a), txy, tyz, NEAREST)
    assert set(np.unique(out.labels)) <= {0, 2}


def test_trilinear_rotation_of_constant_interior():
    v = Volume(np.ones((9, 9, 9)))
    out = apply_rotation(v, 45.0, 30.0, TRILINEAR).voxels
    assert out[4, 4, 4] == pytest.approx(1.0)
    assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-12


def test_rotation_unknown_interpolation():
    with pytest.raises(ConfigError):
        apply_rotation(Volume(np.ones((3, 3, 3))), 10, 0, "cubic")


# -- sampling -------------------------------------------------------------------

def test_sample_augment_mirror_frequency():
    rng = stream(0, "augment-test")
    flags = np.array([sample_augment(rng).mirror for _ in range(10_000)])
    freq = flags.mean(axis=0)
    assert np.all((freq >= 0.47) & (freq <= 0.53))


def test_sample_augment_replay_and_range():
    a = [sample_augment(stream(3, "x", i)) for i in range(50)]
    b = [sample_augment(stream(3, "x", i)) for i in range(50)]
    assert a == b
    assert all(0 <= s.theta_xy < 360 and 0 <= s.theta_yz < 360 for s in a)


def test_augment_spec_normalizes_angles():
    s = AugmentSpec((1, 0, 0), 360.0, -90.0)
    assert s.theta_xy == 0.0 and s.theta_yz == 270.0 and s.mirror == (True, False, False)


# -- mask generation --------------------------------------------------------------

def test_mask_within_brain_without_tumor(phantom):
    _, brain, _ = phantom
    empty = LabelMask(np.zeros(brain.dims))
    mask = generate_healthy_mask(brain, empty, MaskGenParams(), stream(1, "m"))
    assert mask.healthy.any()
    assert not (mask.healthy & ~brain.masked).any()


def test_mask_failure_when_tumor_fills_brain(phantom):
    _, brain, _ = phantom
    tumor = LabelMask.from_bool(brain.masked, 2)
    with pytest.raises(MaskGenFailure):
        generate_healthy_mask(brain, tumor, MaskGenParams(), stream(1, "m"))


def test_mask_safety_margin_small_sample(phantom):
    _, brain, unhealthy = phantom
    params = MaskGenParams()
    n = brain.masked.sum()
    for i in range(10):
        mask = generate_healthy_mask(brain, unhealthy, params, stream(2, "m", i))
        assert min_distance_to(mask.healthy, unhealthy.masked) > params.safety_radius
        assert params.fmin <= mask.healthy.sum() / n <= params.fmax


def test_invalid_params():
    with pytest.raises(ConfigError):
        MaskGenParams(fmin=0.1, fmax=0.05)
    with pytest.raises(ConfigError):
        MaskGenParams(safety_radius=-1)


def test_augmented_set(phantom):
    _, brain, unhealthy = phantom
    five = build_augmented_set(brain, unhealthy, 5, seed=4)
    assert len(five) == 5
    for i in range(5):
        for j in range(i + 1, 5):
            assert five[i][0] != five[j][0]
    assert len(build_augmented_set(brain, unhealthy, 1, seed=4)) == 1
    again = build_augmented_set(brain, unhealthy, 5, seed=4)
    assert all(a[0] == b[0] and a[1] == b[1] for a, b in zip(five, again))
