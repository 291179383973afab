import numpy as np
import pytest

from hrcount.engine import Tensor, backward
from hrcount.model import (
    CHECKPOINT_MAGIC, CheckpointError, ModelConfig, compute_cam, init_model, load_checkpoint,
    read_checkpoint_header, save_checkpoint,
)
from hrcount.training import hr_loss_terms

from conftest import micro_net, random_gam

SMALL = ModelConfig(block_channels=(4, 4, 8, 8), pools_after_blocks=(1, 2, 3))


def test_default_architecture():
    cfg = ModelConfig()
    assert cfg.stride == 8 and cfg.feature_channels == 64
    net = init_model(cfg)
    out = net(np.zeros((2, 1, 64, 64), dtype=np.float32))
    assert out.count_pred.shape == (2, 1)
    assert out.last_features.shape == (2, 64, 8, 8)
    assert net.head_weight.shape == (1, 64) and net.head_bias.shape == (1,)


def test_three_dim_input_gets_a_channel_axis():
    net = init_model(SMALL)
    a = net(np.ones((1, 16, 16), dtype=np.float32)).count_pred.data
    b = net(np.ones((1, 1, 16, 16), dtype=np.float32)).count_pred.data
    np.testing.assert_array_equal(a, b)


def test_init_is_seeded():
    a, b = init_model(SMALL), init_model(SMALL)
    c = init_model(ModelConfig(**{**SMALL.to_dict(), "seed": 1}))
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params
               if k.endswith("weight"))


def test_init_statistics():
    net = init_model(ModelConfig())
    w = net.params["block3.conv1.weight"].data
    assert abs(w.std() - np.sqrt(2.0 / (32 * 9))) < 0.05 * np.sqrt(2.0 / (32 * 9))
    assert np.all(net.params["block1.conv1.prelu"].data == 0.25)
    assert np.all(net.params["block1.conv1.bias"].data == 0)


def test_rejects_indivisible_extents():
    with pytest.raises(ValueError):
        init_model(SMALL)(np.zeros((1, 1, 20, 16), dtype=np.float32))


@pytest.mark.parametrize("bad", [
    dict(block_channels=()), dict(kernel_size=2), dict(pools_after_blocks=(0,)),
    dict(pools_after_blocks=(1, 1)), dict(convs_per_block=0),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ModelConfig(**{**SMALL.to_dict(), **bad})


def routing_draw(seed):
    """Gradients of the heatmap term alone, for one random (net, batch) draw."""
    r = np.random.default_rng(seed)
    net = micro_net(seed)
    images = r.uniform(0, 1, (2, 1, 8, 8))
    gam = np.stack([random_gam(r, int(r.integers(1, 4)), (8, 8), net.stride) for _ in range(2)])
    out = net(images)
    _, heat = hr_loss_terms(out, [1, 2], gam, net.head_weight, 1.0)
    net.zero_grad()
    backward(heat)
    return net


def routing_ok(net) -> bool:
    if np.any(net.head_weight.grad != 0) or np.any(net.head_bias.grad != 0):
        return False
    for b in range(1, len(net.config.block_channels) + 1):
        grads = [t.grad for k, t in net.conv_parameters().items() if k.startswith(f"block{b}.")]
        if not any(np.any(g != 0) for g in grads):
            return False
    return True


@pytest.mark.parametrize("seed", range(5))
def test_heatmap_gradient_reaches_only_conv_layers(seed):
    assert routing_ok(routing_draw(seed))


def test_count_term_does_reach_the_head():
    net = micro_net(0)
    out = net(np.random.default_rng(0).uniform(0, 1, (2, 1, 8, 8)))
    count, _ = hr_loss_terms(out, [10, 10], None, net.head_weight, 0.0)
    backward(count)
    assert np.any(net.head_weight.grad != 0) and np.any(net.head_bias.grad != 0)


def cam_identity_gap(seed) -> float:
    r = np.random.default_rng(seed)
    cfg = ModelConfig(block_channels=tuple(int(c) for c in r.integers(2, 9, 4)),
                      pools_after_blocks=(1, 2, 3), seed=seed)
    net = init_model(cfg)
    net.head_bias.data[...] = r.normal(0, 2, 1)
    out = net(r.uniform(0, 1, (2, 1, 16, 16)).astype(np.float32))
    cam = compute_cam(out.last_features, net.head_weight).data.astype(np.float64)
    recon = cam.mean(axis=(1, 2)) + float(net.head_bias.data[0])
    pred = out.count_pred.data[:, 0].astype(np.float64)
    return float(np.max(np.abs(pred - recon) / np.maximum(1.0, np.abs(pred))))


@pytest.mark.parametrize("seed", range(5))
def test_count_equals_cam_mean_plus_bias(seed):
    assert cam_identity_gap(seed) <= 1e-5


def test_cam_weight_is_detached():
    f = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
    w = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    backward(compute_cam(f, w).sum())
    assert np.all(w.grad == 0)
    np.testing.assert_array_equal(f.grad[0, :, 0, 0], [1.0, 2.0])


# --- checkpoints --------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    net = init_model(SMALL)
    net.params["head.bias"].data[...] = 0.123456789
    save_checkpoint(net, tmp_path / "a.hrc", meta={"method": "hr"})
    back = load_checkpoint(tmp_path / "a.hrc")
    assert back.config == net.config
    for k, t in net.params.items():
        assert back.params[k].data.dtype == np.float32
        assert back.params[k].data.tobytes() == t.data.tobytes()
    assert read_checkpoint_header(tmp_path / "a.hrc")["meta"] == {"method": "hr"}
    save_checkpoint(back, tmp_path / "b.hrc", meta={"method": "hr"})
    assert (tmp_path / "a.hrc").read_bytes() == (tmp_path / "b.hrc").read_bytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.hrc"
    p.write_bytes(b"NOPE\n" + b"\0" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_checkpoint_rejects_shape_mismatch(tmp_path):
    import json
    import struct
    save_checkpoint(init_model(SMALL), tmp_path / "a.hrc")
    raw = (tmp_path / "a.hrc").read_bytes()
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, pos)
    header = json.loads(raw[pos + 4:pos + 4 + hlen])
    header["config"]["block_channels"][0] = 5
    hb = json.dumps(header).encode()
    (tmp_path / "b.hrc").write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(hb)) + hb
                                     + raw[pos + 4 + hlen:])
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "b.hrc")


def test_checkpoint_rejects_truncation(tmp_path):
    save_checkpoint(init_model(SMALL), tmp_path / "a.hrc")
    raw = (tmp_path / "a.hrc").read_bytes()
    (tmp_path / "b.hrc").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "b.hrc")
