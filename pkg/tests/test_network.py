import numpy as np
import pytest

from arnsal import ops
from arnsal.autograd import Tensor, backward, no_grad
from arnsal.network import NetConfig, SaliencyModel, StageError, arn_forward, backbone_forward, init_parameters, model_forward

import oracles

TINY = dict(input_size=32, width_mult=0.0625, rcl_channels=4, decoder_channels=4, rcl_t_steps=2)


def tiny(seed=0, **kw):
    return SaliencyModel(NetConfig(**{**TINY, "seed": seed, **kw}))


def randomize_gammas(model, rng, lo=0.5, hi=1.0):
    for att in model.attention_modules():
        att.gamma.data[...] = rng.uniform(lo, hi)


def test_full_width_224_ladder():
    shapes = SaliencyModel(NetConfig(input_size=224, width_mult=1.0, rcl_channels=64, decoder_channels=64), init=False).trace_shapes()
    assert shapes["L2"] == (128, 112, 112)
    assert shapes["L3"] == (256, 56, 56)
    assert shapes["L4"] == (512, 28, 28)
    assert shapes["S5"] == (512, 14, 14)
    assert shapes["output"] == (1, 224, 224)


def test_desk_scale_ladder_runs():
    model = SaliencyModel()
    image = np.random.default_rng(0).standard_normal((3, 64, 64))
    with no_grad():
        taps = model.backbone_forward(image)
    assert [t.shape for t in taps] == [(16, 32, 32), (32, 16, 16), (64, 8, 8), (64, 4, 4)]
    assert model.predict(image).shape == (1, 64, 64)


@pytest.mark.slow
def test_real_forward_at_224():
    model = SaliencyModel(NetConfig(input_size=224, width_mult=0.0625, rcl_channels=4, decoder_channels=4, rcl_t_steps=1))
    randomize_gammas(model, np.random.default_rng(0))
    image = np.random.default_rng(1).standard_normal((3, 224, 224))
    with no_grad():
        taps = model.backbone_forward(image)
        assert [t.shape[1] for t in taps] == [112, 56, 28, 14]
        out = model.arn_forward(*taps).data
    assert out.shape == (1, 224, 224) and np.all((out >= 0) & (out <= 1))


def test_wrong_input_size_rejected():
    with pytest.raises(ValueError, match="3x32x32"):
        tiny()(np.zeros((3, 64, 64)))
    with pytest.raises(ValueError, match="multiple of 16"):
        NetConfig(input_size=40)
    with pytest.raises(ValueError):
        NetConfig(width_mult=0.0)


def test_stage_mismatch_names_the_stage():
    model = tiny()
    l2 = Tensor(np.zeros((2, 16, 16)))
    l3 = Tensor(np.zeros((4, 8, 8)))
    l4 = Tensor(np.zeros((32, 5, 5)))
    s5 = Tensor(np.zeros((32, 2, 2)))
    with pytest.raises(StageError, match="stage 4"):
        model.arn_forward(l2, l3, l4, s5)


def test_zero_weight_backbone_propagates_bias():
    model = tiny()
    rng = np.random.default_rng(2)
    image = rng.standard_normal((3, 32, 32))
    expected_c = None
    for block in model.backbone.blocks:
        for conv in block.layers:
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = rng.standard_normal(conv.bias.shape)
    with no_grad():
        taps = model.backbone_forward(image)
    for tap, block in zip(taps, model.backbone.blocks[1:]):
        expected_c = np.maximum(block.layers[-1].bias.data, 0.0)
        np.testing.assert_array_equal(tap.data, np.broadcast_to(expected_c[:, None, None], tap.shape))


def _conv(layer, x):
    o = oracles.conv2d_loops(x, layer.weight.data, layer.bias.data, 1, layer.pad) if x.size <= 512 else None
    if o is None:
        o = ops.conv2d(Tensor(x), layer.weight, layer.bias, pad=layer.pad).data
    return o


def _relu(x):
    return np.maximum(x, 0.0)


def _att(att, x):
    y, _ = oracles.attention_loops(x, att.w_f.data[:, :, 0, 0], att.w_g.data[:, :, 0, 0], att.w_h.data[:, :, 0, 0], att.gamma.data[0])
    return y


def _rcl(unit, u):
    ff = _conv_raw(u, unit.w_f.data, unit.b.data)
    x = oracles.lrn_direct(_relu(ff), 1e-4, 0.75, 5)
    for _ in range(unit.t_steps):
        x = oracles.lrn_direct(_relu(ff + _conv_raw(x, unit.w_r.data)), 1e-4, 0.75, 5)
    return x


def _conv_raw(x, w, b=None):
    return ops.conv2d(Tensor(x), Tensor(w), None if b is None else Tensor(b), pad=w.shape[-1] // 2).data


def test_forward_matches_straight_line_composition():
    model = tiny(seed=3)
    rng = np.random.default_rng(4)
    randomize_gammas(model, rng)
    for p in model.parameters():
        if p.data.ndim == 1 and "gamma" not in p.name:
            p.data[...] = rng.uniform(-0.1, 0.1, size=p.shape)
    image = rng.standard_normal((3, 32, 32)) * 50
    x = image
    taps = []
    for b, block in enumerate(model.backbone.blocks):
        if b:
            x = oracles.maxpool_loops(x)
        for conv in block.layers:
            x = _relu(_conv(conv, x))
        taps.append(x)
    l2, l3, l4, s5 = taps[1:]
    s = _att(model.att5, s5)
    for stage, side in ((model.stage4, l4), (model.stage3, l3), (model.stage2, l2)):
        up = ops.conv_transpose2d(Tensor(s), stage.up.weight, stage.up.bias).data
        r = _rcl(stage.rcl, _relu(_conv(stage.adapter, side)))
        s = _att(stage.att, _relu(_conv(stage.fuse, np.concatenate([up, r]))))
    logits = _conv(model.readout, s)
    sal = 1.0 / (1.0 + np.exp(-logits))
    a = ops.interp_matrix(sal.shape[1], 2 * sal.shape[1], np.float64)
    want = np.stack([a @ sal[0] @ a.T])
    got = model.predict(image)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_attention_identity_at_init_is_bitwise():
    model = SaliencyModel()
    image = np.random.default_rng(5).standard_normal((3, 64, 64)) * 60
    with no_grad():
        taps = backbone_forward(image, model)
        full = model.arn_forward(*taps).data
        ablated = model.arn_forward(*taps, attention=False).data
    assert full.tobytes() == ablated.tobytes()
    assert arn_forward(*taps, model).data.tobytes() == full.tobytes()


def test_outputs_in_unit_interval_and_finite():
    model = tiny(seed=1)
    randomize_gammas(model, np.random.default_rng(6), -2, 2)
    rng = np.random.default_rng(7)
    for _ in range(100):
        out = model.predict(rng.standard_normal((3, 32, 32)) * rng.uniform(1, 200))
        assert np.all(np.isfinite(out)) and np.all((out >= 0) & (out <= 1))


def test_deterministic_forward():
    image = np.random.default_rng(8).standard_normal((3, 32, 32))
    a = model_forward(image, tiny(seed=9)).data
    b = model_forward(image, tiny(seed=9)).data
    assert a.tobytes() == b.tobytes()


def test_init_rules():
    model = SaliencyModel()
    for p in model.parameters():
        if p.data.ndim == 1:
            assert not p.data.any(), p.name
        else:
            a, b, kh, kw = p.shape
            bound = np.sqrt(6.0 / ((a + b) * kh * kw))
            assert np.abs(p.data).max() <= bound and p.data.std() > 0, p.name
    assert [att.gamma.data[0] for att in model.attention_modules()] == [0.0] * 4
    other = SaliencyModel()
    init_parameters(other, 0)
    assert all(np.array_equal(p.data, q.data) for p, q in zip(model.parameters(), other.parameters()))
    init_parameters(other, 1)
    assert not np.array_equal(model.parameters()[0].data, other.parameters()[0].data)


def test_parameter_names_unique_and_count_pure():
    model = SaliencyModel()
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names))
    assert model.num_parameters() == SaliencyModel(NetConfig(), init=False).num_parameters()
    assert sum(n.endswith("gamma") for n in names) == 4
    assert sum(".rcl" in n and n.endswith("w_r") for n in names) == 3
    assert sum(".up" in n and n.endswith("weight") for n in names) == 3


@pytest.mark.parametrize("seed", range(3))
def test_every_parameter_receives_gradient(seed):
    model = tiny(seed=seed)
    rng = np.random.default_rng(seed + 10)
    randomize_gammas(model, rng)
    for p in model.parameters():
        if p.data.ndim == 1 and "gamma" not in p.name:
            p.data[...] = rng.uniform(0.0, 0.1, size=p.shape)
    image = Tensor(rng.standard_normal((3, 32, 32)) * 60)
    mask = (rng.random((1, 32, 32)) > 0.5).astype(np.float64)
    backward(ops.binary_cross_entropy(model(image), mask))
    dead = [p.name for p in model.parameters() if not np.linalg.norm(p.grad) > 0]
    assert not dead


def test_gamma_gets_gradient_at_init():
    model = tiny(seed=0)
    rng = np.random.default_rng(0)
    image = Tensor(rng.standard_normal((3, 32, 32)) * 60)
    backward(ops.binary_cross_entropy(model(image), (rng.random((1, 32, 32)) > 0.5).astype(float)))
    for att in model.attention_modules():
        assert att.gamma.grad[0] != 0.0
