"""Image containers, mask-aware quality metrics, and PNG/frame-dir I/O.

Metrics follow the repo-wide evaluation contract: RMSE inside binary
masks, SSIM over the mask's bounding box (11x11 Gaussian window,
sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.0), and the temporal
flicker measure as MAE within intersections of consecutive masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import convolve

from relight.determinism import map_indexed
from relight.errors import EmptyRegionError


@dataclass
class BinaryMask:
    """H x W boolean mask with its bounding box derived on demand."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be HxW, got shape {arr.shape}")
        self.bits = arr.astype(bool)

    @property
    def empty(self) -> bool:
        return not self.bits.any()

    def bbox(self):
        """(row0, row1, col0, col1), half-open; None for an empty mask."""
        if self.empty:
            return None
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass
class ImageTensor:
    """H x W x C float image with an optional binary mask."""

    data: np.ndarray
    mask: BinaryMask | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be HxWxC, got shape {np.shape(self.data)}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image values must be finite")
        if self.mask is not None and self.mask.bits.shape != arr.shape[:2]:
            raise ValueError(
                f"mask shape {self.mask.bits.shape} != image shape {arr.shape[:2]}"
            )
        self.data = arr

    @property
    def shape(self):
        return self.data.shape


@dataclass
class VideoSequence:
    """Ordered frames with per-frame masks; all frames share H, W, C."""

    frames: list = field(default_factory=list)
    fps: float = 30.0

    def __post_init__(self):
        shapes = {f.data.shape for f in self.frames}
        if len(shapes) > 1:
            raise ValueError(f"frames disagree on shape: {sorted(shapes)}")

    def __len__(self):
        return len(self.frames)


def _check_same_shape(a: ImageTensor, b: ImageTensor):
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def masked_rmse(a: ImageTensor, b: ImageTensor, mask: BinaryMask) -> float:
    """Root-mean-square difference over masked pixels, all channels."""
    _check_same_shape(a, b)
    if mask.bits.shape != a.data.shape[:2]:
        raise ValueError(f"mask shape {mask.bits.shape} != image shape {a.data.shape[:2]}")
    if mask.empty:
        raise EmptyRegionError("mask selects no pixels")
    diff = a.data[mask.bits] - b.data[mask.bits]
    return float(np.sqrt(np.mean(diff * diff)))


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_bbox(a: ImageTensor, b: ImageTensor, mask: BinaryMask) -> float:
    """Mean SSIM over the mask's bounding-box crop (dynamic range 1.0)."""
    _check_same_shape(a, b)
    box = mask.bbox()
    if box is None:
        raise EmptyRegionError("mask selects no pixels")
    r0, r1, c0, c1 = box
    if r1 - r0 < _SSIM_WINDOW or c1 - c0 < _SSIM_WINDOW:
        raise ValueError(
            f"bounding box {r1 - r0}x{c1 - c0} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window"
        )
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1_const = (_SSIM_K1 * 1.0) ** 2
    c2_const = (_SSIM_K2 * 1.0) ** 2
    vals = []
    for ch in range(a.data.shape[2]):
        x = a.data[r0:r1, c0:c1, ch]
        y = b.data[r0:r1, c0:c1, ch]
        mu_x = _valid_filter(x, win)
        mu_y = _valid_filter(y, win)
        xx = _valid_filter(x * x, win) - mu_x * mu_x
        yy = _valid_filter(y * y, win) - mu_y * mu_y
        xy = _valid_filter(x * y, win) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1_const) * (2 * xy + c2_const)
        den = (mu_x * mu_x + mu_y * mu_y + c1_const) * (xx + yy + c2_const)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def _valid_filter(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    full = convolve(img, win, mode="constant")
    r = win.shape[0] // 2
    return full[r:-r, r:-r]


def temporal_mae(video: VideoSequence, threads: int = 1) -> list:
    """MAE between consecutive frames within the intersection of their masks.

    Returns one entry per frame pair; a pair whose masks do not intersect
    yields None (a flagged missing value, never zero).
    """
    if len(video) < 2:
        raise ValueError(f"need at least 2 frames, got {len(video)}")

    def pair_mae(i):
        fa, fb = video.frames[i], video.frames[i + 1]
        ma = fa.mask.bits if fa.mask is not None else np.ones(fa.data.shape[:2], bool)
        mb = fb.mask.bits if fb.mask is not None else np.ones(fb.data.shape[:2], bool)
        inter = ma & mb
        if not inter.any():
            return None
        return float(np.mean(np.abs(fa.data[inter] - fb.data[inter])))

    return map_indexed(pair_mae, range(len(video) - 1), threads=threads)


def metrics_report(a: ImageTensor, b: ImageTensor, mask: BinaryMask) -> dict:
    """RMSE/SSIM report dict; LPIPS is reported as "n/a" to keep the
    column layout of larger evaluations comparable."""
    return {
        "rmse": masked_rmse(a, b, mask),
        "ssim": ssim_bbox(a, b, mask),
        "lpips": "n/a",
        "temporal_mae": [],
    }


# ---------------------------------------------------------------------------
# PNG and frame-directory I/O


def write_png(path, data: np.ndarray) -> None:
    """Save floats in [0, 1] as 8-bit PNG (1 or 3 channels)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Load an 8-bit PNG as floats in [0, 1]; RGB gives HxWx3, gray HxWx1."""
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr[..., :3]


def write_mask_png(path, mask: BinaryMask) -> None:
    Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8)).save(path, format="PNG")


def read_mask_png(path) -> BinaryMask:
    arr = np.asarray(Image.open(path).convert("L"))
    return BinaryMask(arr >= 128)


def write_video_dir(path, video: VideoSequence) -> None:
    """Write a video as <path>/frames/NNNN.png + <path>/masks/NNNN.png."""
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        write_png(root / "frames" / f"{i:04d}.png", frame.data)
        mask = frame.mask or BinaryMask(np.ones(frame.data.shape[:2], bool))
        write_mask_png(root / "masks" / f"{i:04d}.png", mask)


def read_video_dir(path) -> VideoSequence:
    root = Path(path)
    frame_paths = sorted((root / "frames").glob("*.png"))
    if not frame_paths:
        raise FileNotFoundError(f"no frames/*.png under {root}")
    frames = []
    for fp in frame_paths:
        mp = root / "masks" / fp.name
        mask = read_mask_png(mp) if mp.exists() else None
        frames.append(ImageTensor(read_png(fp), mask=mask))
    return VideoSequence(frames)
