"""Network builders: shapes, initialization, and checkpointing."""

import numpy as np
import pytest

from relight import autodiff as ad
from relight.autodiff import Tensor
from relight.nets import (
    Net,
    NetConfig,
    build_dvp_net,
    build_stage1_net,
    build_stage2_net,
    load_net,
    param_count,
    save_net,
)

CFG = NetConfig(resolution=32, base_width=4, seed=0)


def rand_image(c=3, res=32, seed=0):
    return np.random.default_rng(seed).uniform(size=(res, res, c))


def test_config_validation():
    with pytest.raises(ValueError):
        NetConfig(resolution=48)  # not a power of two
    with pytest.raises(ValueError):
        NetConfig(resolution=16)  # too small for the decoder stack


def test_stage1_output_shapes_and_ranges():
    net = build_stage1_net(CFG)
    out = net(rand_image())
    assert set(out) == {"albedo", "skin", "transport", "light"}
    assert out["albedo"].data.shape == (32, 32, 3)
    assert out["skin"].data.shape == (32, 32, 1)
    assert out["transport"].data.shape == (32, 32, 9)
    assert out["light"].data.shape == (3, 9)
    # Sigmoid heads stay in (0, 1); transport is linear.
    assert out["albedo"].data.min() > 0 and out["albedo"].data.max() < 1
    assert out["skin"].data.min() > 0 and out["skin"].data.max() < 1


def test_stage1_param_count_stable_across_seeds():
    n0 = param_count(build_stage1_net(CFG))
    n1 = param_count(build_stage1_net(NetConfig(resolution=32, base_width=4, seed=9)))
    assert n0 == n1
    # Width scaling changes the count; resolution does not.
    assert param_count(build_stage1_net(
        NetConfig(resolution=64, base_width=4, seed=0))) == n0
    assert param_count(build_stage1_net(
        NetConfig(resolution=32, base_width=6, seed=0))) > n0


def test_same_seed_same_weights_different_seed_different():
    a = build_stage1_net(CFG).state_dict()
    b = build_stage1_net(CFG).state_dict()
    c = build_stage1_net(NetConfig(resolution=32, base_width=4, seed=1)).state_dict()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    assert any(np.abs(a[k] - c[k]).max() > 0 for k in a if a[k].size > 1)


def test_he_initialization_scale():
    net = build_stage1_net(NetConfig(resolution=32, base_width=8, seed=3))
    # First conv: fan_in = 9 * 3; std should be near sqrt(2 / fan_in).
    w = next(v.data for k, v in net.params.items()
             if k.endswith(".w") and v.data.shape[:3] == (3, 3, 3))
    want = np.sqrt(2.0 / (9 * 3))
    assert np.std(w) == pytest.approx(want, rel=0.35)
    biases = [v.data for k, v in net.params.items() if k.endswith(".b")]
    assert all(np.all(b == 0.0) for b in biases)


def test_stage1_gradients_reach_every_parameter():
    net = build_stage1_net(CFG)
    out = net(rand_image())
    loss = (ad.mean_all(out["albedo"]) + ad.mean_all(out["transport"])
            + ad.mean_all(out["light"]) + ad.mean_all(out["skin"]))
    loss.backward()
    dead = [k for k, p in net.params.items()
            if p.grad is None or not np.any(p.grad != 0)]
    assert dead == []


def test_stage2_variant_contracts():
    for variant, cin in (("a", 6), ("b", 6), ("c", 33)):
        net = build_stage2_net(CFG, variant=variant)
        assert net.meta["in_channels"] == cin
        out = net(rand_image(c=cin, seed=4))
        assert out.data.shape == (32, 32, 3)
        if variant == "a":
            assert np.abs(out.data).max() > 0
        else:
            # Zero-initialized head: the first forward pass is exactly zero.
            np.testing.assert_array_equal(out.data, 0.0)
    with pytest.raises(ValueError):
        build_stage2_net(CFG, variant="d")


def test_stage2_zero_head_still_trains():
    # At zero output, a loss with nonzero gradient there (L2 to a
    # target) must reach the zero-initialized head weights, or training
    # could never move off zero.
    net = build_stage2_net(CFG, variant="b")
    out = net(rand_image(c=6, seed=5))
    target = np.full((32, 32, 3), 0.5)
    ad.mean_all((out - target) ** 2.0).backward()
    head_keys = [k for k in net.params
                 if k.endswith(".w") and np.all(net.params[k].data == 0.0)]
    assert head_keys, "expected a zero-initialized head weight"
    for k in head_keys:
        g = net.params[k].grad
        assert g is not None and np.any(g != 0), k


def test_dvp_net_variants():
    plain = build_dvp_net(CFG, conditioned=False)
    cond = build_dvp_net(CFG, conditioned=True)
    assert plain.meta["in_channels"] == 3
    assert cond.meta["in_channels"] == 30
    out = plain(rand_image(c=3, seed=6))
    assert out.data.shape == (32, 32, 3)
    assert np.abs(out.data).max() > 0  # He head, not zero-initialized


def test_checkpoint_round_trip_bit_exact(tmp_path):
    # The container stores float32, so start from float32-representable
    # weights; then reloads must be exact and re-saving byte-identical.
    net = build_stage1_net(CFG)
    for p in net.params.values():
        p.data = (p.data + 0.001).astype(np.float32).astype(np.float64)
    save_net(tmp_path / "n.rltc", net, step=42, extra_meta={"note": 1})
    back, step, meta = load_net(tmp_path / "n.rltc")
    assert step == 42
    assert meta["kind"] == "stage1" and meta["note"] == 1
    x = rand_image(seed=7)
    orig = net(x)
    loaded = back(x)
    for key in ("albedo", "transport", "light", "skin"):
        np.testing.assert_array_equal(orig[key].data, loaded[key].data)
    save_net(tmp_path / "n2.rltc", back, step=42, extra_meta={"note": 1})
    assert (tmp_path / "n.rltc").read_bytes() == (tmp_path / "n2.rltc").read_bytes()


def test_stage2_checkpoint_restores_variant(tmp_path):
    net = build_stage2_net(CFG, variant="c")
    save_net(tmp_path / "s2.rltc", net)
    back, _, meta = load_net(tmp_path / "s2.rltc")
    assert meta["variant"] == "c"
    assert back.meta["in_channels"] == 33


def test_load_state_rejects_mismatches():
    net = build_stage2_net(CFG, variant="b")
    state = net.state_dict()
    bad = dict(state)
    bad.pop(sorted(bad)[0])
    with pytest.raises(ValueError, match="missing"):
        net.load_state(bad)
    wrong = dict(state)
    k = sorted(wrong)[0]
    wrong[k] = np.zeros((1, 1))
    with pytest.raises(ValueError, match="shape"):
        net.load_state(wrong)


def test_duplicate_parameter_names_rejected():
    class FakeLayer:
        def params(self):
            return {"w": Tensor(np.zeros((1, 1, 1)), requires_grad=True)}

    with pytest.raises(ValueError, match="duplicate"):
        Net("x", {}, [FakeLayer(), FakeLayer()], lambda x: x)


def test_forward_is_deterministic():
    net = build_stage1_net(CFG)
    x = rand_image(seed=8)
    a = net(x)["transport"].data
    b = net(x)["transport"].data
    np.testing.assert_array_equal(a, b)
