import numpy as np
import pytest

from gradcheck import check_gradients, max_error
from voxelfill.errors import ConfigError, ShapeError
from voxelfill.losses import LossConfig, combined_loss
from voxelfill.rng import stream
from voxelfill.tensor import Tensor, backward, ops
from voxelfill.unet import MATCHED, UNetConfig, build_unet, count_params, forward, param_shapes


def conv_count(cin, cout, k=3):
    return cout * cin * k ** 3 + cout


def test_tiny_config_hand_enumeration():
    cfg = UNetConfig(base_channels=1, levels=1, in_channels=1, out_channels=1)
    # down0: 1->1, 1->1 (conv + IN + PReLU each); bridge: 1->2, 2->2 (conv + IN)
    # up0 (halved, floored at 1): concat 2+1=3 -> 1, 1->1 (conv + IN + PReLU); head 1x1x1 conv 1->1
    expected = (
        conv_count(1, 1) + 2 + 1 + conv_count(1, 1) + 2 + 1
        + conv_count(1, 2) + 4 + conv_count(2, 2) + 4
        + conv_count(3, 1) + 2 + 1 + conv_count(1, 1) + 2 + 1
        + conv_count(1, 1, k=1)
    )
    params = build_unet(cfg, 0)
    assert sum(p.data.size for p in params.values()) == expected
    assert count_params(cfg) == expected


def closed_form(base, levels, cin, cout_final, halved=True):
    """Independent closed form: sum over levels of the block formulas."""
    total = 0
    c_prev = cin
    for i in range(levels):
        c = base * 2 ** i
        total += (c * c_prev * 27 + c + 3 * c) + (c * c * 27 + c + 3 * c)
        c_prev = c
    cb = base * 2 ** levels
    total += (cb * c_prev * 27 + cb + 2 * cb) + (cb * cb * 27 + cb + 2 * cb)
    up_in = cb
    for i in reversed(range(levels)):
        skip = base * 2 ** i
        c = max(1, skip // 2) if halved else skip
        total += (c * (up_in + skip) * 27 + c + 3 * c) + (c * c * 27 + c + 3 * c)
        up_in = c
    return total + cout_final * up_in + cout_final


@pytest.mark.parametrize("halved", [True, False])
def test_full_size_config_param_count(halved):
    cfg = UNetConfig(base_channels=32, levels=3, in_channels=2, out_channels=1,
                     up_channel_rule="halved" if halved else MATCHED)
    shapes = param_shapes(cfg)
    constructed = sum(int(np.prod(s)) for _, s in shapes)
    assert constructed == closed_form(32, 3, 2, 1, halved)
    assert count_params(cfg) == constructed


def test_param_count_monotone_in_base():
    counts = [count_params(UNetConfig(base_channels=b, levels=2)) for b in range(1, 9)]
    assert all(a < b for a, b in zip(counts, counts[1:]))


def test_build_is_deterministic():
    cfg = UNetConfig(base_channels=2, levels=2)
    a, b = build_unet(cfg, 5), build_unet(cfg, 5)
    assert list(a) == list(b)
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)
    c = build_unet(cfg, 6)
    assert any(a[k].data.tobytes() != c[k].data.tobytes() for k in a)


def test_invalid_config():
    with pytest.raises(ConfigError):
        UNetConfig(levels=0)
    with pytest.raises(ConfigError):
        UNetConfig(dropout_rate=1.0)
    with pytest.raises(ConfigError):
        UNetConfig(up_channel_rule="tripled")


def test_shape_contract_three_level_ladder():
    cfg = UNetConfig(base_channels=2, levels=3)  # three levels, narrow channels
    params = build_unet(cfg, 0)
    out = forward(params, cfg, Tensor(np.random.default_rng(0).standard_normal((2, 16, 16, 16))))
    assert out.shape == (1, 16, 16, 16)
    with pytest.raises(ShapeError):
        forward(params, cfg, Tensor(np.zeros((2, 12, 12, 12))))


@pytest.mark.slow
def test_full_size_config_forward_shape():
    cfg = UNetConfig()
    params = build_unet(cfg, 0)
    out = forward(params, cfg, Tensor(np.random.default_rng(0).standard_normal((2, 32, 32, 32))))
    assert out.shape == (1, 32, 32, 32)


def test_eval_forward_deterministic_and_train_replay(rng):
    cfg = UNetConfig(base_channels=2, levels=2, dropout_rate=0.3)
    params = build_unet(cfg, 1)
    x = Tensor(rng.standard_normal((2, 8, 8, 8)))
    a = forward(params, cfg, x).data
    b = forward(params, cfg, x).data
    assert a.tobytes() == b.tobytes()
    t1 = forward(params, cfg, x, train=True, rng=stream(0, "d")).data
    t2 = forward(params, cfg, x, train=True, rng=stream(0, "d")).data
    t3 = forward(params, cfg, x, train=True, rng=stream(1, "d")).data
    assert t1.tobytes() == t2.tobytes()
    assert t1.tobytes() != t3.tobytes()


def test_tanh_head_bounded(rng):
    cfg = UNetConfig(base_channels=2, levels=1, final_activation="tanh")
    out = forward(build_unet(cfg, 0), cfg, Tensor(rng.standard_normal((2, 4, 4, 4)) * 10))
    assert np.all(np.abs(out.data) <= 1.0)


def test_skip_connections_carry_gradient(rng):
    cfg = UNetConfig(base_channels=2, levels=2, dropout_rate=0.0)
    params = build_unet(cfg, 0)
    # cut the bridge: only the skip paths can reach the head
    for name, p in params.items():
        if name.startswith("bridge.conv"):
            p.data[...] = 0.0
    out = forward(params, cfg, Tensor(rng.standard_normal((2, 8, 8, 8))))
    backward(ops.sum_all(out * rng.standard_normal(out.shape)))
    assert np.any(params["down0.conv1.weight"].grad != 0)


def test_end_to_end_gradient_small(rng):
    cfg = UNetConfig(base_channels=2, levels=2, dropout_rate=0.2)
    params = build_unet(cfg, 3)
    x = Tensor(rng.standard_normal((2, 8, 8, 8)))
    target = rng.uniform(-1, 1, (1, 8, 8, 8))
    healthy = rng.random((8, 8, 8)) < 0.3

    def loss():
        pred = forward(params, cfg, x, train=True, rng=stream(9, "dropout"))
        return combined_loss(pred, target, healthy, LossConfig())

    res = check_gradients(loss, list(params.values()), 60, seed=1)
    assert max_error(res) < 1e-4
