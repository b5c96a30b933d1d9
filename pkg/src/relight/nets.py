"""Toy-scale encoder/decoder networks built on the autodiff ops.

One shared spine: six 3x3 convolutions (strides 1,2,2,2,2,1) plus a
residual block at the bottleneck, widths (w, 2w, 4w, 6w, 8w, 8w) from a
small base width. Decoders upsample with nearest-neighbour + conv
(never transposed convolution) and take skip connections from the
matching encoder scale.

Three builders:
  - stage 1: decoders for albedo (+ skin logit) and transport, and a
    pooled fully-connected head for the 27 light coefficients;
  - stage 2: single-decoder U-net; variant "b" predicts a residual with
    a zero-initialized final layer, "a" predicts the image directly,
    "c" is "b" with the inferred light tiled into the input;
  - the video stabilizer: the stage-2 body at 3 or 30 input channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from relight import autodiff as ad
from relight.autodiff import Tensor
from relight.determinism import rng_for
from relight.tensorio import load_checkpoint, save_checkpoint

_NET_STREAM = 11


@dataclass(frozen=True)
class NetConfig:
    resolution: int = 64
    base_width: int = 6
    seed: int = 0

    def __post_init__(self):
        r = self.resolution
        if r < 32 or (r & (r - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 32, got {r}")
        if self.base_width < 1:
            raise ValueError(f"base_width must be >= 1, got {self.base_width}")


class Conv:
    """3x3 conv layer; He fan-in init unless zero_init."""

    def __init__(self, name, cin, cout, rng, stride=1, zero_init=False):
        self.name = name
        self.stride = stride
        if zero_init:
            w = np.zeros((3, 3, cin, cout))
        else:
            w = rng.normal(0.0, math.sqrt(2.0 / (9 * cin)), size=(3, 3, cin, cout))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x):
        try:
            return ad.conv2d(x, self.weight, self.bias, stride=self.stride)
        except ValueError as e:
            raise ValueError(f"layer '{self.name}': {e}") from None

    def params(self):
        return {f"{self.name}.w": self.weight, f"{self.name}.b": self.bias}


class DenseLayer:
    def __init__(self, name, fin, fout, rng):
        self.name = name
        w = rng.normal(0.0, math.sqrt(2.0 / fin), size=(fin, fout))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True)

    def __call__(self, x):
        try:
            return ad.dense(x, self.weight, self.bias)
        except ValueError as e:
            raise ValueError(f"layer '{self.name}': {e}") from None

    def params(self):
        return {f"{self.name}.w": self.weight, f"{self.name}.b": self.bias}


class Net:
    """Parameter container plus a forward callable."""

    def __init__(self, kind: str, meta: dict, layers: list, forward):
        self.kind = kind
        self.meta = dict(meta)
        self._forward = forward
        self.params = {}
        for layer in layers:
            for k, v in layer.params().items():
                if k in self.params:
                    raise ValueError(f"duplicate parameter name '{k}'")
                self.params[k] = v

    def __call__(self, *inputs):
        return self._forward(*inputs)

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"parameter '{k}': checkpoint shape {arr.shape} != net shape {p.data.shape}")
            p.data = arr.copy()


def param_count(net: Net) -> int:
    return int(sum(p.data.size for p in net.params.values()))


def _lrelu(x):
    return ad.leaky_relu(x, 0.2)


class _Spine:
    """Shared encoder: six convs + bottleneck residual block."""

    def __init__(self, prefix, cin, w, rng):
        self.convs = [
            Conv(f"{prefix}.enc0", cin, w, rng, stride=1),
            Conv(f"{prefix}.enc1", w, 2 * w, rng, stride=2),
            Conv(f"{prefix}.enc2", 2 * w, 4 * w, rng, stride=2),
            Conv(f"{prefix}.enc3", 4 * w, 6 * w, rng, stride=2),
            Conv(f"{prefix}.enc4", 6 * w, 8 * w, rng, stride=2),
            Conv(f"{prefix}.enc5", 8 * w, 8 * w, rng, stride=1),
        ]
        self.res1 = Conv(f"{prefix}.res1", 8 * w, 8 * w, rng)
        self.res2 = Conv(f"{prefix}.res2", 8 * w, 8 * w, rng)

    def layers(self):
        return [*self.convs, self.res1, self.res2]

    def __call__(self, x):
        skips = []
        for conv in self.convs[:4]:
            x = _lrelu(conv(x))
            skips.append(x)
        x = _lrelu(self.convs[4](x))
        x = _lrelu(self.convs[5](x))
        x = x + self.res2(_lrelu(self.res1(x)))  # residual block
        return x, skips


class _Decoder:
    """Upsample+conv decoder with skip concatenation at each scale."""

    def __init__(self, prefix, w, out_ch, rng, zero_final=False):
        self.blocks = [
            Conv(f"{prefix}.dec3", 8 * w + 6 * w, 6 * w, rng),
            Conv(f"{prefix}.dec2", 6 * w + 4 * w, 4 * w, rng),
            Conv(f"{prefix}.dec1", 4 * w + 2 * w, 2 * w, rng),
            Conv(f"{prefix}.dec0", 2 * w + w, w, rng),
        ]
        self.head = Conv(f"{prefix}.head", w, out_ch, rng, zero_init=zero_final)

    def layers(self):
        return [*self.blocks, self.head]

    def __call__(self, bottleneck, skips):
        x = bottleneck
        for conv, skip in zip(self.blocks, reversed(skips)):
            x = _lrelu(conv(ad.concat_channels([ad.upsample2(x), skip])))
        return self.head(x)


def build_stage1_net(config: NetConfig) -> Net:
    """Shared encoder, albedo(4ch) and transport(9ch) decoders with
    skips, and a pooled dense head for the light coefficients.

    Forward: (H, W, 3) image -> dict with albedo (H, W, 3, sigmoid),
    skin (H, W, 1, sigmoid), transport (H, W, 9, linear), light (3, 9).
    """
    w = config.base_width
    rng = rng_for(config.seed, _NET_STREAM, 1)
    spine = _Spine("enc", 3, w, rng)
    dec_a = _Decoder("alb", w, 4, rng)
    dec_t = _Decoder("trn", w, 9, rng)
    fc1 = DenseLayer("light.fc1", 8 * w, 8 * w, rng)
    fc2 = DenseLayer("light.fc2", 8 * w, 27, rng)

    def forward(x):
        b, skips = spine(ad.as_tensor(x))
        a_out = dec_a(b, skips)
        albedo = ad.sigmoid(ad.slice_channels(a_out, 0, 3))
        skin = ad.sigmoid(ad.slice_channels(a_out, 3, 4))
        transport = dec_t(b, skips)
        light = ad.reshape(fc2(_lrelu(fc1(ad.global_avg_pool(b)))), (3, 9))
        return {"albedo": albedo, "skin": skin, "transport": transport, "light": light}

    layers = [*spine.layers(), *dec_a.layers(), *dec_t.layers(), fc1, fc2]
    meta = {"kind": "stage1", "resolution": config.resolution,
            "base_width": w, "seed": config.seed}
    return Net("stage1", meta, layers, forward)


_STAGE2_IN = {"a": 6, "b": 6, "c": 33}


def build_stage2_net(config: NetConfig, variant: str = "b") -> Net:
    """Single-decoder U-net for refinement.

    Input channels: masked photo (3) + stage-1 reconstruction (3), plus
    the tiled inferred light (27) for variant "c". Variants "b" and "c"
    output a residual from a zero-initialized head, so the initial
    prediction equals the stage-1 reconstruction; variant "a" outputs
    the image directly from a standard-initialized head.
    """
    if variant not in _STAGE2_IN:
        raise ValueError(f"variant must be one of {sorted(_STAGE2_IN)}, got '{variant}'")
    cin = _STAGE2_IN[variant]
    net = _single_decoder_net(config, cin, zero_final=variant != "a",
                              kind="stage2", rng_tag=2)
    net.meta["variant"] = variant
    return net


def build_dvp_net(config: NetConfig, conditioned: bool) -> Net:
    """Stabilizer network: the stage-2 body, freshly initialized.

    Input is the original frame (3ch) or frame + tiled target light
    (30ch) when light-conditioned; output is the 3-channel image.
    """
    net = _single_decoder_net(config, 30 if conditioned else 3,
                              zero_final=False, kind="dvp", rng_tag=4)
    net.meta["conditioned"] = bool(conditioned)
    return net


def _single_decoder_net(config: NetConfig, cin: int, zero_final: bool,
                        kind: str, rng_tag: int) -> Net:
    w = config.base_width
    rng = rng_for(config.seed, _NET_STREAM, rng_tag, cin)
    spine = _Spine("enc", cin, w, rng)
    dec = _Decoder("dec", w, 3, rng, zero_final=zero_final)

    def forward(x):
        b, skips = spine(ad.as_tensor(x))
        return dec(b, skips)

    meta = {"kind": kind, "resolution": config.resolution,
            "base_width": w, "seed": config.seed, "in_channels": cin}
    return Net(kind, meta, [*spine.layers(), *dec.layers()], forward)


# ---------------------------------------------------------------------------
# checkpoints


def save_net(path, net: Net, step: int = 0, extra_meta: dict | None = None):
    meta = dict(net.meta)
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, net.state_dict(), step=step, meta=meta)


def load_net(path) -> tuple:
    """Rebuild the net a checkpoint describes and load its weights.

    Returns (net, step, meta).
    """
    tensors, step, meta = load_checkpoint(path)
    config = NetConfig(resolution=int(meta["resolution"]),
                       base_width=int(meta["base_width"]),
                       seed=int(meta["seed"]))
    kind = meta["kind"]
    if kind == "stage1":
        net = build_stage1_net(config)
    elif kind == "stage2":
        net = build_stage2_net(config, meta["variant"])
    elif kind == "dvp":
        net = build_dvp_net(config, bool(meta["conditioned"]))
    else:
        raise ValueError(f"unknown checkpoint kind '{kind}'")
    net.load_state(tensors)
    return net, step, meta
