"""Reverse-mode gradient checks against central finite differences.

Every differentiable op gets checked at h = 1e-3 with relative error
below 1e-4 (measured against the larger of the two magnitudes, floored).
Forward oracles for conv/upsample/pool are brute-force loops.
"""

import numpy as np
import pytest

from relight import autodiff as ad
from relight.autodiff import Tensor


def numeric_grad(fn, x, h=1e-3):
    """Central finite differences of a scalar-valued fn at x."""
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        old = xf[i]
        xf[i] = old + h
        hi = fn(x)
        xf[i] = old - h
        lo = fn(x)
        xf[i] = old
        flat[i] = (hi - lo) / (2 * h)
    return g


def check_grad(build, x, h=1e-3, tol=1e-4):
    """build(Tensor) -> scalar Tensor; compares autodiff grad to FD."""
    t = Tensor(x.copy(), requires_grad=True)
    out = build(t)
    out.backward()
    num = numeric_grad(lambda v: float(build(Tensor(v)).data), x.copy(), h=h)
    denom = np.maximum(np.maximum(np.abs(t.grad), np.abs(num)), 1.0)
    rel = np.abs(t.grad - num) / denom
    assert rel.max() < tol, f"max rel err {rel.max():.2e}"


def rnd(shape, seed, scale=1.0, offset=0.0):
    return np.random.default_rng(seed).normal(size=shape) * scale + offset


def test_add_mul_broadcast_grads():
    x = rnd((4, 5, 3), 0)
    b = rnd((1, 1, 3), 1)
    check_grad(lambda t: ad.sum_all(ad.mul(ad.add(t, b), t)), x)


def test_scalar_operator_sugar():
    x = rnd((3, 3, 2), 2)
    check_grad(lambda t: ad.sum_all((t * 2.0 - 1.0) / 4.0 + t), x)
    check_grad(lambda t: ad.sum_all(1.0 - t), x)
    check_grad(lambda t: ad.sum_all(-t), x)


def test_power_grad():
    x = np.abs(rnd((4, 4, 1), 3)) + 0.5
    check_grad(lambda t: ad.sum_all(t ** 3.0), x)
    check_grad(lambda t: ad.sum_all(ad.power(t, 1.7)), x)


def test_log_grad():
    x = np.abs(rnd((4, 4, 2), 4)) + 0.5
    check_grad(lambda t: ad.sum_all(ad.log(t)), x)


def test_absolute_grad_away_from_kink():
    x = rnd((5, 5, 1), 5)
    x[np.abs(x) < 0.05] = 0.1  # keep FD away from the nondifferentiable point
    check_grad(lambda t: ad.sum_all(ad.absolute(t)), x)


def test_clamp_and_clip_grads():
    x = rnd((6, 6, 1), 6)
    x[np.abs(x - 0.0) < 0.05] += 0.2
    x[np.abs(x - 1.0) < 0.05] += 0.2
    check_grad(lambda t: ad.sum_all(ad.clamp_min(t, 0.0) * 2.0), x)
    check_grad(lambda t: ad.sum_all(ad.clip(t, 0.0, 1.0) * t), x)


def test_leaky_relu_grad_and_slope():
    x = rnd((5, 5, 2), 7)
    x[np.abs(x) < 0.05] = 0.3
    check_grad(lambda t: ad.sum_all(ad.leaky_relu(t)), x)
    t = Tensor(np.array([[[-2.0]]]), requires_grad=True)
    ad.sum_all(ad.leaky_relu(t)).backward()
    assert t.grad[0, 0, 0] == pytest.approx(0.2)


def test_sigmoid_tanh_grads():
    x = rnd((4, 4, 3), 8, scale=2.0)
    check_grad(lambda t: ad.sum_all(ad.sigmoid(t)), x)
    check_grad(lambda t: ad.sum_all(ad.tanh(t)), x)


def test_sigmoid_extreme_inputs_stable():
    t = Tensor(np.array([[[-800.0, 800.0]]]), requires_grad=True)
    out = ad.sigmoid(t)
    assert np.all(np.isfinite(out.data))
    assert out.data[0, 0, 0] == pytest.approx(0.0, abs=1e-12)
    assert out.data[0, 0, 1] == pytest.approx(1.0, abs=1e-12)
    ad.sum_all(out).backward()
    assert np.all(np.isfinite(t.grad))


def test_mean_and_sum_grads():
    x = rnd((3, 7, 2), 9)
    check_grad(lambda t: ad.mean_all(t * t), x)
    t = Tensor(x, requires_grad=True)
    ad.mean_all(t).backward()
    np.testing.assert_allclose(t.grad, 1.0 / x.size, atol=1e-15)


def test_concat_slice_reshape_grads():
    x = rnd((4, 4, 5), 10)

    def build(t):
        a = ad.slice_channels(t, 0, 2)
        b = ad.slice_channels(t, 2, 5)
        cat = ad.concat_channels([ad.mul(a, a), b])
        return ad.sum_all(ad.reshape(cat, (4 * 4 * 5,)) ** 2.0)

    check_grad(build, x)


def test_upsample2_forward_and_grad():
    x = rnd((3, 2, 2), 11)
    up = ad.upsample2(Tensor(x)).data
    assert up.shape == (6, 4, 2)
    for i in range(6):
        for j in range(4):
            np.testing.assert_array_equal(up[i, j], x[i // 2, j // 2])
    check_grad(lambda t: ad.sum_all(ad.upsample2(t) ** 2.0), x)


def test_global_avg_pool_forward_and_grad():
    x = rnd((5, 5, 4), 12)
    pooled = ad.global_avg_pool(Tensor(x)).data
    assert pooled.shape == (4,)
    np.testing.assert_allclose(pooled, x.mean(axis=(0, 1)), atol=1e-15)
    check_grad(lambda t: ad.sum_all(ad.global_avg_pool(t) ** 2.0), x)


def test_dense_grads_all_inputs():
    x = rnd((6,), 13)
    w = rnd((6, 4), 14)
    b = rnd((4,), 15)
    check_grad(lambda t: ad.sum_all(ad.dense(t, Tensor(w), Tensor(b)) ** 2.0), x)
    check_grad(
        lambda t: ad.sum_all(ad.dense(Tensor(x), t, Tensor(b)) ** 2.0), w)
    check_grad(
        lambda t: ad.sum_all(ad.dense(Tensor(x), Tensor(w), t) ** 2.0), b)


def loop_conv2d(x, w, b, stride):
    k = w.shape[0]
    pad = k // 2
    h, wid, cin = x.shape
    cout = w.shape[3]
    xp = np.zeros((h + 2 * pad, wid + 2 * pad, cin))
    xp[pad:pad + h, pad:pad + wid] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wid + 2 * pad - k) // stride + 1
    out = np.zeros((ho, wo, cout))
    for i in range(ho):
        for j in range(wo):
            patch = xp[i * stride:i * stride + k, j * stride:j * stride + k]
            out[i, j] = np.einsum("abc,abcd->d", patch, w) + b
    return out


@pytest.mark.parametrize("stride,k,h", [(1, 3, 6), (2, 3, 6), (1, 1, 5), (2, 3, 7)])
def test_conv2d_forward_matches_loop(stride, k, h):
    rng = np.random.default_rng(16)
    x = rng.normal(size=(h, h, 3))
    w = rng.normal(size=(k, k, 3, 4))
    b = rng.normal(size=(4,))
    got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
    np.testing.assert_allclose(got, loop_conv2d(x, w, b, stride), atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_grads(stride):
    rng = np.random.default_rng(17)
    x = rng.normal(size=(5, 5, 2))
    w = rng.normal(size=(3, 3, 2, 3)) * 0.5
    b = rng.normal(size=(3,))
    check_grad(lambda t: ad.sum_all(
        ad.conv2d(t, Tensor(w), Tensor(b), stride=stride) ** 2.0), x)
    check_grad(lambda t: ad.sum_all(
        ad.conv2d(Tensor(x), t, Tensor(b), stride=stride) ** 2.0), w)
    check_grad(lambda t: ad.sum_all(
        ad.conv2d(Tensor(x), Tensor(w), t, stride=stride) ** 2.0), b)


def test_fixed_conv_matches_loop_and_grad():
    rng = np.random.default_rng(18)
    x = rng.normal(size=(7, 7, 2))
    kernel = rng.normal(size=(5, 5))
    got = ad.fixed_conv2d_same(Tensor(x), kernel).data
    want = np.empty_like(x)
    xp = np.zeros((11, 11, 2))
    xp[2:9, 2:9] = x
    kf = kernel[::-1, ::-1]  # true convolution flips the kernel
    for i in range(7):
        for j in range(7):
            for c in range(2):
                want[i, j, c] = (xp[i:i + 5, j:j + 5, c] * kf).sum()
    np.testing.assert_allclose(got, want, atol=1e-10)
    check_grad(lambda t: ad.sum_all(ad.fixed_conv2d_same(t, kernel) ** 2.0), x)


def test_shading_dot_grads():
    rng = np.random.default_rng(19)
    tr = rng.normal(size=(4, 4, 9))
    li = rng.normal(size=(3, 9))
    got = ad.shading_dot(Tensor(tr), Tensor(li)).data
    np.testing.assert_allclose(got, np.einsum("hwk,ck->hwc", tr, li), atol=1e-12)
    check_grad(lambda t: ad.sum_all(ad.shading_dot(t, Tensor(li)) ** 2.0), tr)
    check_grad(lambda t: ad.sum_all(ad.shading_dot(Tensor(tr), t) ** 2.0), li)


def test_diamond_graph_accumulates_once_per_path():
    # y = x*x + x*x reuses the same intermediate; grad must be 4x.
    x = Tensor(np.array([[[3.0]]]), requires_grad=True)
    sq = ad.mul(x, x)
    ad.sum_all(ad.add(sq, sq)).backward()
    assert x.grad[0, 0, 0] == pytest.approx(12.0)


def test_deep_chain_does_not_recurse():
    x = Tensor(np.ones((1, 1, 1)), requires_grad=True)
    y = x
    for _ in range(5000):
        y = ad.add(y, 0.0)
    ad.sum_all(y).backward()
    assert x.grad[0, 0, 0] == 1.0


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2, 1)), requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(x, x).backward()


def test_no_grad_leaves_keep_tape_empty():
    x = Tensor(np.ones((2, 2, 1)))
    out = ad.mul(x, x)
    assert out._parents == ()


def test_detach_blocks_gradient():
    x = Tensor(np.full((1, 1, 1), 2.0), requires_grad=True)
    ad.sum_all(ad.mul(x.detach(), x)).backward()
    assert x.grad[0, 0, 0] == pytest.approx(2.0)


def test_numpy_array_defers_to_tensor():
    # ndarray * Tensor must hit Tensor.__rmul__, not ufunc broadcasting.
    arr = np.full((2, 2, 1), 3.0)
    x = Tensor(np.full((2, 2, 1), 2.0), requires_grad=True)
    out = arr * x
    assert isinstance(out, Tensor)
    ad.sum_all(out).backward()
    np.testing.assert_allclose(x.grad, 3.0, atol=1e-15)
    out2 = arr + x
    assert isinstance(out2, Tensor)


def test_item_and_float():
    t = Tensor(np.array(2.5))
    assert t.item() == 2.5
    assert float(t) == 2.5
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 2))).item()


def test_unbroadcast_shapes():
    x = rnd((1, 4, 1), 20)
    y = rnd((3, 4, 2), 21)
    t = Tensor(x, requires_grad=True)
    ad.sum_all(ad.mul(t, Tensor(y))).backward()
    assert t.grad.shape == (1, 4, 1)
    np.testing.assert_allclose(t.grad, y.sum(axis=(0, 2), keepdims=True), atol=1e-12)
