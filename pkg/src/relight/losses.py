"""Training losses: subband frequency loss, focal loss, and the
stage-1 breakdown over albedo/transport/light predictions.

Every public loss accepts numpy arrays or autodiff Tensors and returns a
Tensor (use float() or .item() for the value). Masked terms average over
mask-interior pixels only; the subband loss normalizes by the full frame
so its value does not depend on how much background a crop carries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from relight import autodiff as ad
from relight.autodiff import Tensor


def log_kernel(sigma: float) -> np.ndarray:
    """Laplacian-of-Gaussian taps at integer offsets, K = 2*ceil(3*sigma)+1.

    G(x) = -(1 / (2 pi sigma^2)) * (2 - |x|^2 / sigma^2) * exp(-|x|^2 / sigma^2)

    Note the exponent uses sigma^2, not 2 sigma^2, and the taps are the
    sampled continuous kernel, not renormalized: the continuous integral
    is -1/2, so the kernel keeps a DC response on purpose.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3.0 * sigma)
    off = np.arange(-r, r + 1, dtype=np.float64)
    r2 = off[:, None] ** 2 + off[None, :] ** 2
    s2 = sigma * sigma
    return -(1.0 / (2.0 * math.pi * s2)) * (2.0 - r2 / s2) * np.exp(-r2 / s2)


@dataclass(frozen=True)
class LoGKernel:
    """One subband: its scale, loss weight, and sampled taps."""

    sigma: float
    weight: float
    taps: np.ndarray


@dataclass(frozen=True)
class SubbandSpec:
    """Scales and weights of the subband frequency loss."""

    sigmas: tuple = (0.6, 1.2, 2.4, 4.8, 9.6, 19.2)
    weights: tuple = (600.0, 500.0, 400.0, 20.0, 10.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.sigmas) != len(self.weights):
            raise ValueError(
                f"{len(self.sigmas)} sigmas vs {len(self.weights)} weights")

    def kernels(self) -> tuple:
        return _kernels_for(self.sigmas, self.weights)


@lru_cache(maxsize=8)
def _kernels_for(sigmas, weights):
    return tuple(LoGKernel(s, w, log_kernel(s)) for s, w in zip(sigmas, weights))


DEFAULT_SUBBANDS = SubbandSpec()


def sf_loss(a, b, spec: SubbandSpec = DEFAULT_SUBBANDS, mask=None) -> Tensor:
    """Weighted squared subband differences, averaged over the frame.

    sum_i w_i * mean((G_i * a - G_i * b)^2), with zero padding. The
    convolution is linear so it runs once on a - b. An optional mask
    zeroes both inputs outside the region first; the normalizer stays
    C*H*W of the full frame.
    """
    diff = ad.as_tensor(a) - ad.as_tensor(b)
    if diff.data.ndim != 3:
        raise ValueError(f"expected (H, W, C) inputs, got shape {diff.data.shape}")
    if mask is not None:
        diff = diff * np.asarray(mask, dtype=np.float64)[..., None]
    total = None
    for k in spec.kernels():
        band = ad.mean_all(ad.fixed_conv2d_same(diff, k.taps) ** 2.0) * k.weight
        total = band if total is None else total + band
    return total


def l1_loss(a, b, mask=None) -> Tensor:
    """Mean absolute difference, over the mask interior when given."""
    diff = ad.absolute(ad.as_tensor(a) - ad.as_tensor(b))
    return _masked_mean(diff, mask)


def l2_loss(a, b, mask=None) -> Tensor:
    """Mean squared difference, over the mask interior when given."""
    diff = (ad.as_tensor(a) - ad.as_tensor(b)) ** 2.0
    return _masked_mean(diff, mask)


def _masked_mean(x: Tensor, mask) -> Tensor:
    if mask is None:
        return ad.mean_all(x)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != x.data.shape[:2]:
        raise ValueError(f"mask shape {m.shape} != image shape {x.data.shape[:2]}")
    channels = 1 if x.data.ndim == 2 else x.data.shape[2]
    count = m.sum() * channels
    if count == 0:
        raise ValueError("mask selects no pixels")
    weights = m if x.data.ndim == 2 else m[..., None]
    return ad.sum_all(x * weights) * (1.0 / count)


def focal_loss(prob, target, mask=None, gamma: float = 2.0,
               alpha: float = 0.25, eps: float = 1e-7) -> Tensor:
    """Binary focal loss -alpha_t (1 - p_t)^gamma log(p_t), mask-averaged.

    `prob` is the predicted foreground probability (already squashed);
    `target` is 0/1. p_t is clamped to [eps, 1 - eps] before the log.
    """
    p = ad.as_tensor(prob)
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 2 and p.data.ndim == 3 and p.data.shape[2] == 1:
        t = t[..., None]
    if t.shape != p.data.shape:
        raise ValueError(f"target shape {t.shape} != prob shape {p.data.shape}")
    p_t = p * t + (1.0 - p) * (1.0 - t)
    p_t = ad.clip(p_t, eps, 1.0 - eps)
    alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t)
    term = -1.0 * alpha_t * (1.0 - p_t) ** gamma * ad.log(p_t)
    return _masked_mean(term, mask)


def compose_shading_terms(transport, light, clamp: bool = True) -> Tensor:
    """Per-pixel shading from transport (H, W, K) and light (C, K).

    Clamps negatives after the dot product by default; the raw linear
    path exists for linearity checks.
    """
    s = ad.shading_dot(transport, light)
    return ad.clamp_min(s, 0.0) if clamp else s


@dataclass
class Stage1LossResult:
    """Total plus each named term; all values are Tensors."""

    total: Tensor
    terms: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {k: float(v) for k, v in self.terms.items()}


def _component(bundle, name):
    """Field access for dicts and dataclass-style objects alike."""
    try:
        value = bundle[name] if isinstance(bundle, dict) else getattr(bundle, name)
    except (KeyError, AttributeError):
        raise ValueError(f"stage-1 loss input is missing component '{name}'") from None
    # Unwrap container types down to plain arrays / Tensors.
    for attr in ("coeffs", "data", "bits"):
        if not isinstance(value, (np.ndarray, Tensor)) and hasattr(value, attr):
            value = getattr(value, attr)
    return value


def stage1_loss(pred, gt, spec: SubbandSpec = DEFAULT_SUBBANDS) -> Stage1LossResult:
    """All sixteen stage-1 terms at unit weight.

    pred carries albedo (H, W, 3), transport (H, W, K), light (C, K)
    and skin (H, W, 1) probabilities; gt carries its own versions plus
    image and the region mask (dicts and attribute-style objects both
    work). The ground-truth shading target is composed from the
    ground-truth transport and light. Terms:

    - three unary L2s (albedo, transport over the mask; light over
      raw coefficients),
    - seven reconstructions: every predicted/ground-truth combination
      of albedo * clamp(transport . light) except all-ground-truth,
      against the ground-truth image,
    - three shadings: the combinations with at least one predicted
      factor, against the ground-truth shading,
    - subband loss on albedo and on the all-predicted shading,
    - focal loss on the skin probability map.
    """
    mask = np.asarray(_component(gt, "mask"), dtype=bool)
    a_p, t_p, l_p = (_component(pred, k) for k in ("albedo", "transport", "light"))
    a_g, t_g, l_g = (_component(gt, k) for k in ("albedo", "transport", "light"))

    terms: dict = {
        "albedo": l2_loss(a_p, a_g, mask),
        "transport": l2_loss(t_p, t_g, mask),
        "light": ad.mean_all((ad.as_tensor(l_p) - ad.as_tensor(l_g)) ** 2.0),
    }

    shading = {
        "pp": compose_shading_terms(t_p, l_p),
        "pg": compose_shading_terms(t_p, l_g),
        "gp": compose_shading_terms(t_g, l_p),
        "gg": compose_shading_terms(t_g, l_g),
    }
    gt_image = _component(gt, "image")
    gt_shading = shading["gg"].data
    albedos = {"p": ad.as_tensor(a_p), "g": ad.as_tensor(a_g)}
    for a_tag in "pg":
        for tl_tag in ("pp", "pg", "gp", "gg"):
            if a_tag == "g" and tl_tag == "gg":
                continue  # that product IS the ground-truth image
            recon = albedos[a_tag] * shading[tl_tag]
            terms[f"recon_{a_tag}{tl_tag}"] = l2_loss(recon, gt_image, mask)
    for tl_tag in ("pp", "pg", "gp"):
        terms[f"shading_{tl_tag}"] = l2_loss(shading[tl_tag], gt_shading, mask)

    terms["sf_albedo"] = sf_loss(a_p, a_g, spec, mask=mask)
    terms["sf_shading"] = sf_loss(shading["pp"], gt_shading, spec, mask=mask)
    terms["skin_focal"] = focal_loss(_component(pred, "skin"), _component(gt, "skin"), mask)

    total = None
    for v in terms.values():
        total = v if total is None else total + v
    return Stage1LossResult(total=total, terms=terms)
