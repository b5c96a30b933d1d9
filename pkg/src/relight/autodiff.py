"""Reverse-mode autodiff on float64 numpy arrays, define-by-run.

Single-sample layout throughout: feature maps are (H, W, C), vectors are
flat (N,). The op set is exactly what the nets and losses here need:
elementwise arithmetic, a handful of activations, strided 3x3-style
convolution, nearest-neighbour upsampling, channel concat/slice, global
average pooling, dense layers, a frozen-kernel FFT convolution for the
subband losses, and the transport-times-light contraction.

Gradients accumulate into ``Tensor.grad`` on ``backward()``, which only
accepts scalar outputs. Graphs are rebuilt every step; nothing is retained
between calls.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve


class Tensor:
    """Array node in the computation graph.

    ``requires_grad`` marks trainable leaves. Interior nodes receive
    gradients whenever any ancestor is trainable.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Make `ndarray op Tensor` defer to the reflected Tensor operator
    # instead of numpy building an object array of element Tensors.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        self._backward = _backward

    # -- bookkeeping --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.data.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _needs_grad(self) -> bool:
        return self.requires_grad or self._parents != ()

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar node; accumulates into .grad."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, shape is {self.data.shape}")
        order = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))


def _toposort(root: Tensor):
    """Reverse topological order, iteratively (graphs can be deep)."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return list(reversed(order))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _link(data, parents, backward) -> Tensor:
    """Create an op result; drops the tape if no parent needs gradients."""
    live = [p for p in parents if p._needs_grad()]
    if not live:
        return Tensor(data)
    return Tensor(data, _parents=live, _backward=backward)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        if a._needs_grad():
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b._needs_grad():
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _link(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        if a._needs_grad():
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b._needs_grad():
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _link(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _link(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _link(out, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    out = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _link(out, (a,), backward)


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); subgradient 0 on the clamped side."""
    a = as_tensor(a)
    out = np.maximum(a.data, lo)

    def backward(g):
        a._accumulate(g * (a.data > lo))

    return _link(out, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        a._accumulate(g * ((a.data > lo) & (a.data < hi)))

    return _link(out, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data > 0, a.data, slope * a.data)

    def backward(g):
        a._accumulate(g * np.where(a.data > 0, 1.0, slope))

    return _link(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # Split by sign so neither branch exponentiates a large positive value.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _link(out, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _link(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum()

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return _link(out, (a,), backward)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    out = a.data.mean()

    def backward(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    return _link(out, (a,), backward)


# ---------------------------------------------------------------------------
# shape plumbing


def concat_channels(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    splits = np.cumsum([p.data.shape[-1] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=-1)):
            if p._needs_grad():
                p._accumulate(piece)

    return _link(out, tuple(parts), backward)


def slice_channels(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    out = a.data[..., start:stop]

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        a._accumulate(full)

    return _link(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _link(out, (a,), backward)


def upsample2(a) -> Tensor:
    """Nearest-neighbour 2x upsampling of an (H, W, C) map."""
    a = as_tensor(a)
    out = np.repeat(np.repeat(a.data, 2, axis=0), 2, axis=1)

    def backward(g):
        h, w, c = a.data.shape
        a._accumulate(g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)))

    return _link(out, (a,), backward)


def global_avg_pool(a) -> Tensor:
    """(H, W, C) -> (C,) spatial mean."""
    a = as_tensor(a)
    h, w, _ = a.data.shape
    out = a.data.mean(axis=(0, 1))

    def backward(g):
        a._accumulate(np.broadcast_to(g / (h * w), a.data.shape).copy())

    return _link(out, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra layers


def dense(x, weight, bias) -> Tensor:
    """(F,) @ (F, O) + (O,)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    out = x.data @ weight.data + bias.data

    def backward(g):
        if x._needs_grad():
            x._accumulate(weight.data @ g)
        if weight._needs_grad():
            weight._accumulate(np.outer(x.data, g))
        if bias._needs_grad():
            bias._accumulate(g)

    return _link(out, (x, weight, bias), backward)


def conv2d(x, weight, bias, stride: int = 1) -> Tensor:
    """2D convolution of an (H, W, Cin) map, zero padding k // 2.

    weight is (k, k, Cin, Cout), k odd. Runs as k*k shifted GEMMs, which
    keeps both directions plain matrix products (deterministic under a
    single-threaded BLAS).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    k = weight.data.shape[0]
    if weight.data.shape[1] != k or k % 2 != 1:
        raise ValueError(f"kernel must be odd square, got {weight.data.shape[:2]}")
    h, w, cin = x.data.shape
    if weight.data.shape[2] != cin:
        raise ValueError(f"input has {cin} channels, kernel expects {weight.data.shape[2]}")
    cout = weight.data.shape[3]
    p = k // 2
    ho = (h + 2 * p - k) // stride + 1
    wo = (w + 2 * p - k) // stride + 1
    xp = np.zeros((h + 2 * p, w + 2 * p, cin))
    xp[p:p + h, p:p + w] = x.data

    out = np.tile(bias.data, (ho * wo, 1))
    patches = []
    for di in range(k):
        for dj in range(k):
            patch = xp[di:di + stride * (ho - 1) + 1:stride,
                       dj:dj + stride * (wo - 1) + 1:stride]
            patches.append(patch)
            out += patch.reshape(-1, cin) @ weight.data[di, dj]
    out = out.reshape(ho, wo, cout)

    def backward(g):
        gm = g.reshape(-1, cout)
        if bias._needs_grad():
            bias._accumulate(gm.sum(axis=0))
        if weight._needs_grad():
            gw = np.empty_like(weight.data)
            for idx, (di, dj) in enumerate((i, j) for i in range(k) for j in range(k)):
                gw[di, dj] = patches[idx].reshape(-1, cin).T @ gm
            weight._accumulate(gw)
        if x._needs_grad():
            gxp = np.zeros_like(xp)
            for idx, (di, dj) in enumerate((i, j) for i in range(k) for j in range(k)):
                contrib = (gm @ weight.data[di, dj].T).reshape(ho, wo, cin)
                gxp[di:di + stride * (ho - 1) + 1:stride,
                    dj:dj + stride * (wo - 1) + 1:stride] += contrib
            x._accumulate(gxp[p:p + h, p:p + w])

    return _link(out, (x, weight, bias), backward)


def fixed_conv2d_same(x, kernel: np.ndarray) -> Tensor:
    """'same' FFT convolution of each channel with a frozen 2D kernel.

    The kernel is a plain array, never a parameter; only x gets a
    gradient, via convolution with the flipped kernel (the adjoint of
    zero-padded 'same' convolution for odd-sized kernels).
    """
    x = as_tensor(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 != 1 or kernel.shape[1] % 2 != 1:
        raise ValueError(f"kernel must be odd 2D, got shape {kernel.shape}")
    out = np.stack(
        [fftconvolve(x.data[..., c], kernel, mode="same")
         for c in range(x.data.shape[-1])], axis=-1)
    flipped = kernel[::-1, ::-1]

    def backward(g):
        gx = np.stack(
            [fftconvolve(g[..., c], flipped, mode="same")
             for c in range(g.shape[-1])], axis=-1)
        x._accumulate(gx)

    return _link(out, (x,), backward)


def shading_dot(transport, light) -> Tensor:
    """Contract per-pixel transport (H, W, K) with light (C, K) -> (H, W, C)."""
    transport, light = as_tensor(transport), as_tensor(light)
    out = np.einsum("hwk,ck->hwc", transport.data, light.data)

    def backward(g):
        if transport._needs_grad():
            transport._accumulate(np.einsum("hwc,ck->hwk", g, light.data))
        if light._needs_grad():
            light._accumulate(np.einsum("hwc,hwk->ck", g, transport.data))

    return _link(out, (transport, light), backward)
