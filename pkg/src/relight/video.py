"""Flicker-tolerant video relighting.

The per-frame path relights each frame independently (intentionally
flickery). Stabilization fits a freshly initialized refinement-style
network to the flickery outputs, frame by frame in order: because the
network is shared across frames, it converges to the temporally
consistent part of the signal before it can memorize per-frame noise,
so an epoch budget stands in for manual early stopping.

With light conditioning on, the target illumination is tiled into the
input so one input frame can map to differently lit outputs (a rotating
light over a static subject stays a rotating light instead of being
averaged away).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from relight.determinism import ensure_single_thread_blas
from relight.imaging import ImageTensor, VideoSequence, temporal_mae
from relight.losses import l1_loss, sf_loss
from relight.nets import NetConfig, build_dvp_net
from relight.optim import MomentOptimizer
from relight.pipeline import relight
from relight.sh import ShLight


@dataclass
class FrameLightPair:
    """One frame with its target illumination and flickery relit result."""

    frame: ImageTensor
    light: ShLight
    relit: ImageTensor | None = None


@dataclass(frozen=True)
class DvpConfig:
    """Stabilization knobs: budget, conditioning, loss mix."""

    epochs: int = 30
    light_conditioning: bool = True
    seed: int = 0
    sf_weight: float = 1.0
    l1_weight: float = 1.0
    lr: float = 1e-3
    resolution: int = 64
    base_width: int = 6
    stop_psnr: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


def relight_video(stage1_ckpt, stage2_ckpt, video: VideoSequence,
                  lights: list) -> VideoSequence:
    """Independent per-frame relighting; no temporal coupling at all."""
    if len(lights) != len(video):
        raise ValueError(f"{len(lights)} lights for {len(video)} frames")
    frames = []
    for frame, light in zip(video.frames, lights):
        out = relight(stage1_ckpt, stage2_ckpt, frame, frame.mask, light)
        frames.append(out)
    return VideoSequence(frames, fps=video.fps)


def tile_light(light: ShLight, h: int, w: int) -> ImageTensor:
    """Every pixel carries the light's 27 coefficients, channel-major."""
    if h < 1 or w < 1:
        raise ValueError(f"tile size must be positive, got {h}x{w}")
    return ImageTensor(np.tile(light.coeffs.reshape(-1), (h, w, 1)))


def _mask_bits(frame: ImageTensor) -> np.ndarray:
    if frame.mask is not None:
        return frame.mask.bits
    return np.ones(frame.data.shape[:2], dtype=bool)


def stabilize(video: VideoSequence, relit: VideoSequence, lights,
              config: DvpConfig) -> VideoSequence:
    """Fit a fresh network to the flickery relit frames and return its
    predictions.

    Input per frame: the original frame, concatenated with the tiled
    target light when conditioning is on. Loss per frame: weighted
    subband + L1 against that frame's relit target, masked. One
    optimizer step per frame, frames in order, for the epoch budget
    (or until mean PSNR against the targets passes stop_psnr).
    """
    ensure_single_thread_blas()
    if len(video) != len(relit):
        raise ValueError(f"{len(video)} input frames vs {len(relit)} relit frames")
    if config.light_conditioning and (lights is None or len(lights) != len(video)):
        have = 0 if lights is None else len(lights)
        raise ValueError(f"light conditioning needs {len(video)} lights, got {have}")

    net = build_dvp_net(NetConfig(config.resolution, config.base_width, config.seed),
                        conditioned=config.light_conditioning)
    opt = MomentOptimizer(net.params, lr=config.lr, betas=(0.5, 0.999))

    h, w = video.frames[0].data.shape[:2]
    inputs, targets, masks = [], [], []
    for i, frame in enumerate(video.frames):
        x = frame.data
        if config.light_conditioning:
            x = np.concatenate([x, tile_light(lights[i], h, w).data], axis=-1)
        inputs.append(x)
        targets.append(relit.frames[i].data)
        masks.append(_mask_bits(frame))

    for _ in range(config.epochs):
        sq_errs = []
        for i in range(len(inputs)):
            pred = net(inputs[i])
            loss = (config.l1_weight * l1_loss(pred, targets[i], masks[i])
                    + config.sf_weight * sf_loss(pred, targets[i], mask=masks[i]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            sq_errs.append(float(np.mean((pred.data - targets[i]) ** 2)))
        if config.stop_psnr is not None:
            mse = max(float(np.mean(sq_errs)), 1e-12)
            if 10.0 * math.log10(1.0 / mse) >= config.stop_psnr:
                break

    frames = []
    for i, frame in enumerate(video.frames):
        pred = net(inputs[i]).data * masks[i][..., None]
        frames.append(ImageTensor(np.maximum(pred, 0.0), mask=frame.mask))
    return VideoSequence(frames, fps=video.fps)


def mean_intensity_series(video: VideoSequence) -> list:
    """Masked mean intensity per frame; the light-responsiveness signal."""
    out = []
    for frame in video.frames:
        bits = _mask_bits(frame)
        out.append(float(frame.data[bits].mean()) if bits.any() else 0.0)
    return out


def series_correlation(a, b) -> float:
    """Pearson correlation; 0.0 when either series has no variance."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"series lengths differ: {x.shape} vs {y.shape}")
    xd = x - x.mean()
    yd = y - y.mean()
    vx = float(xd @ xd)
    vy = float(yd @ yd)
    if vx < 1e-18 or vy < 1e-18:
        return 0.0
    return float((xd @ yd) / math.sqrt(vx * vy))


def flicker_report(before: VideoSequence, after: VideoSequence,
                   reference: VideoSequence | None = None) -> dict:
    """Temporal-MAE series for both sequences plus summary numbers.

    The reduction ratio averages over pairs where both series have a
    value. Light responsiveness is the correlation of `after`'s mean
    intensity series with the reference's (with `before`'s when no
    clean reference exists).
    """
    if len(before) != len(after):
        raise ValueError(f"{len(before)} frames vs {len(after)} frames")
    series_before = temporal_mae(before)
    series_after = temporal_mae(after)
    paired = [(b, a) for b, a in zip(series_before, series_after)
              if b is not None and a is not None]
    if paired:
        mean_before = float(np.mean([b for b, _ in paired]))
        mean_after = float(np.mean([a for _, a in paired]))
        ratio = mean_after / mean_before if mean_before > 0 else math.inf
    else:
        mean_before = mean_after = ratio = math.nan
    ref_series = mean_intensity_series(reference if reference is not None else before)
    return {
        "temporal_mae_before": series_before,
        "temporal_mae_after": series_after,
        "mean_before": mean_before,
        "mean_after": mean_after,
        "reduction_ratio": ratio,
        "light_correlation": series_correlation(mean_intensity_series(after), ref_series),
    }


def write_flicker_report(report: dict, json_path, csv_path):
    """Emit the report as JSON plus a per-pair CSV for plotting."""
    Path(json_path).write_text(json.dumps(report, indent=1, sort_keys=True))
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pair", "temporal_mae_before", "temporal_mae_after"])
        for i, (b, a) in enumerate(zip(report["temporal_mae_before"],
                                       report["temporal_mae_after"])):
            writer.writerow([i, "" if b is None else b, "" if a is None else a])
