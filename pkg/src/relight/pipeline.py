"""Two-stage training and relighting orchestration.

Stage 1 regresses albedo, transport, light, and a skin mask from the
masked image and is trained with the full multi-term loss. Stage 2
freezes stage 1, reconstructs the diffuse image, and trains a U-net to
add what the diffuse model cannot express (specular residuals), under
an L1 loss against the photo. Relighting swaps the inferred light for
a target light before the stage-2 pass.

Stage-1 outputs feed stage 2 as plain arrays, never as graph nodes, so
no gradient can reach stage-1 parameters; a bitwise check enforces the
freeze anyway.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from relight.determinism import ensure_single_thread_blas, rng_for
from relight.imaging import BinaryMask, ImageTensor
from relight.losses import l1_loss, stage1_loss
from relight.nets import (
    Net,
    NetConfig,
    build_stage1_net,
    build_stage2_net,
    load_net,
    save_net,
)
from relight.optim import LrSchedule, MomentOptimizer, lr_at
from relight.renderer import (
    RenderSample,
    TransportMap,
    compose_shading,
    load_split,
    reconstruct,
)
from relight.sh import ShLight

_SHUFFLE_STREAM = 13


@dataclass
class Stage1Output:
    """Everything stage 1 infers for one image.

    The reconstruction is always recomputed from the other fields, so
    it can never drift out of sync with them.
    """

    albedo: ImageTensor
    skin: np.ndarray
    transport: TransportMap
    light: ShLight
    reconstruction: ImageTensor


@dataclass(frozen=True)
class TrainConfig:
    """Shared knobs for both training stages."""

    manifest: str
    out_dir: str
    epochs: int = 60
    resolution: int = 64
    base_width: int = 6
    seed: int = 0
    schedule: LrSchedule = LrSchedule()
    variant: str = "b"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class TrainResult:
    net: Net
    checkpoint: Path
    log: list = field(default_factory=list)
    log_path: Path | None = None


def _require_components(samples, context: str):
    for i, s in enumerate(samples):
        for name in ("image", "albedo", "transport", "light", "skin"):
            if getattr(s, name, None) is None:
                raise ValueError(f"{context}: sample {i} is missing '{name}'")
    if not samples:
        raise ValueError(f"{context}: empty dataset")


def _resolve_dataset(config: TrainConfig, dataset, split: str):
    if dataset is None:
        dataset = config.manifest
    if isinstance(dataset, (str, Path)):
        return load_split(dataset, split)
    return list(dataset)


def _write_log(out_dir: Path, name: str, log: list) -> Path:
    path = out_dir / name
    with open(path, "w") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    return path


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return rng_for(seed, _SHUFFLE_STREAM, epoch).permutation(n)


def train_stage1(config: TrainConfig, dataset=None) -> TrainResult:
    """Fit the decomposition net; batch size 1, cosine schedule.

    `dataset` may be a manifest path or a list of samples; defaults to
    the train split of config.manifest. Emits one JSON line per step
    with the full loss breakdown.
    """
    ensure_single_thread_blas()
    samples = _resolve_dataset(config, dataset, "train")
    _require_components(samples, "stage-1 training")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    net = build_stage1_net(NetConfig(config.resolution, config.base_width, config.seed))
    opt = MomentOptimizer(net.params, betas=(0.5, 0.999), rectified=False)
    log = []
    step = 0
    for epoch in range(config.epochs):
        lr = lr_at(config.schedule, epoch)
        for idx in _epoch_order(config.seed, epoch, len(samples)):
            sample = samples[idx]
            pred = net(sample.image.data)
            loss = stage1_loss(pred, sample)
            opt.zero_grad()
            loss.total.backward()
            opt.step(lr)
            step += 1
            entry = {"step": step, "epoch": epoch, "sample": int(idx),
                     "lr": lr, "total": float(loss.total)}
            entry.update(loss.values())
            log.append(entry)
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            save_net(out_dir / f"stage1_epoch{epoch + 1:04d}.rltc", net, step=step)
    ckpt = out_dir / "stage1.rltc"
    save_net(ckpt, net, step=step)
    log_path = _write_log(out_dir, "stage1_log.jsonl", log)
    return TrainResult(net=net, checkpoint=ckpt, log=log, log_path=log_path)


def _as_net(checkpoint) -> Net:
    if isinstance(checkpoint, Net):
        return checkpoint
    net, _, _ = load_net(checkpoint)
    return net


def infer_stage1(checkpoint, image, mask: BinaryMask) -> Stage1Output:
    """Run the decomposition net and compose its own reconstruction."""
    net = _as_net(checkpoint)
    img = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
    pred = net(img * mask.bits[..., None])
    bits = mask.bits
    albedo = ImageTensor(pred["albedo"].data * bits[..., None], mask=mask)
    transport = TransportMap(pred["transport"].data * bits[..., None], mask=mask)
    light = ShLight(pred["light"].data)
    recon = reconstruct(albedo, compose_shading(transport, light))
    return Stage1Output(albedo=albedo, skin=pred["skin"].data[..., 0] * bits,
                        transport=transport, light=light, reconstruction=recon)


def tile_light_vector(light: ShLight, h: int, w: int) -> np.ndarray:
    """(h, w, 27) map holding the channel-major coefficient vector."""
    return np.tile(light.coeffs.reshape(-1), (h, w, 1))


def _stage2_input(photo: np.ndarray, s1: Stage1Output, variant: str) -> np.ndarray:
    parts = [photo, s1.reconstruction.data]
    if variant == "c":
        h, w = photo.shape[:2]
        parts.append(tile_light_vector(s1.light, h, w))
    return np.concatenate(parts, axis=-1)


def _stage2_predict(net: Net, x: np.ndarray, s1_recon: np.ndarray, variant: str):
    """Returns (prediction Tensor, residual Tensor)."""
    out = net(x)
    if variant == "a":
        return out, out - s1_recon
    return out + s1_recon, out


def train_stage2(config: TrainConfig, stage1_ckpt, dataset=None) -> TrainResult:
    """Residual refinement against glossy photos, stage 1 frozen.

    Stage-1 inference runs once per sample up front (its parameters
    never change), and a bitwise parameter comparison before/after
    training enforces the freeze.
    """
    ensure_single_thread_blas()
    samples = _resolve_dataset(config, dataset, "train")
    _require_components(samples, "stage-2 training")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    s1_net = _as_net(stage1_ckpt)
    frozen = {k: v.data.copy() for k, v in s1_net.params.items()}

    net = build_stage2_net(NetConfig(config.resolution, config.base_width, config.seed),
                           variant=config.variant)
    opt = MomentOptimizer(net.params, betas=(0.5, 0.999), rectified=True)

    inputs, recons, photos, masks = [], [], [], []
    for s in samples:
        s1 = infer_stage1(s1_net, s.image, s.mask)
        photos.append(s.image.data)
        recons.append(s1.reconstruction.data)
        inputs.append(_stage2_input(s.image.data, s1, config.variant))
        masks.append(s.mask.bits)

    log = []
    step = 0
    for epoch in range(config.epochs):
        lr = lr_at(config.schedule, epoch)
        for idx in _epoch_order(config.seed, epoch, len(samples)):
            pred, residual = _stage2_predict(net, inputs[idx], recons[idx], config.variant)
            loss = l1_loss(pred, photos[idx], masks[idx])
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            step += 1
            res_mag = float(np.mean(np.abs(residual.data[masks[idx]])))
            log.append({"step": step, "epoch": epoch, "sample": int(idx), "lr": lr,
                        "l1": float(loss), "residual_mean_abs": res_mag})

    for k, v in s1_net.params.items():
        if not np.array_equal(v.data, frozen[k]):
            raise RuntimeError(f"stage-1 parameter '{k}' changed during stage-2 training")

    ckpt = out_dir / "stage2.rltc"
    save_net(ckpt, net, step=step)
    log_path = _write_log(out_dir, "stage2_log.jsonl", log)
    return TrainResult(net=net, checkpoint=ckpt, log=log, log_path=log_path)


def relight(stage1_ckpt, stage2_ckpt, image, mask: BinaryMask,
            new_light: ShLight) -> ImageTensor:
    """Relight one image: infer, swap the light, refine, clamp."""
    s1_net = _as_net(stage1_ckpt)
    s2_net = _as_net(stage2_ckpt)
    variant = s2_net.meta.get("variant", "b")
    img = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
    img = img * mask.bits[..., None]

    s1 = infer_stage1(s1_net, img, mask)
    relit = Stage1Output(albedo=s1.albedo, skin=s1.skin, transport=s1.transport,
                         light=new_light,
                         reconstruction=reconstruct(
                             s1.albedo, compose_shading(s1.transport, new_light)))
    x = _stage2_input(img, relit, variant)
    pred, _ = _stage2_predict(s2_net, x, relit.reconstruction.data, variant)
    out = np.maximum(pred.data, 0.0) * mask.bits[..., None]
    return ImageTensor(out, mask=mask)


def checkpoint_digest(path) -> str:
    """SHA-256 of a checkpoint file, for freeze verification."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def evaluate_stage1(net, samples) -> float:
    """Mean masked RMSE of stage-1 reconstructions vs sample images."""
    vals = []
    for s in samples:
        s1 = infer_stage1(net, s.image, s.mask)
        diff = (s1.reconstruction.data - s.image.data)[s.mask.bits]
        vals.append(float(np.sqrt(np.mean(diff * diff))))
    return float(np.mean(vals))


def evaluate_two_stage(stage1, stage2, samples) -> float:
    """Mean masked RMSE of refined outputs vs sample images."""
    s1_net = _as_net(stage1)
    s2_net = _as_net(stage2)
    variant = s2_net.meta.get("variant", "b")
    vals = []
    for s in samples:
        s1 = infer_stage1(s1_net, s.image, s.mask)
        x = _stage2_input(s.image.data, s1, variant)
        pred, _ = _stage2_predict(s2_net, x, s1.reconstruction.data, variant)
        diff = (pred.data - s.image.data)[s.mask.bits]
        vals.append(float(np.sqrt(np.mean(diff * diff))))
    return float(np.mean(vals))
