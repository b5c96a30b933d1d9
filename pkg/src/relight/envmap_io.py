"""Radiance HDR (RGBE) and PFM image I/O.

Both readers return H x W x 3 float arrays in RGB order, rows top to
bottom. HDR reading supports flat scanlines, old-style run markers, and
new-style per-component RLE; PFM honors the endianness sign in the scale
line and the format's bottom-up row order.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from relight.errors import FormatError
from relight.sh import EnvMap


def read_envmap(path) -> EnvMap:
    """Read a .hdr or .pfm file as an EnvMap (validates the 2:1 layout)."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".hdr":
        return EnvMap(read_hdr(p))
    if suffix == ".pfm":
        return EnvMap(read_pfm(p))
    raise FormatError(f"unsupported env map extension {suffix!r} (want .hdr or .pfm)")


# ---------------------------------------------------------------------------
# Radiance HDR


def read_hdr(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not (blob.startswith(b"#?RADIANCE") or blob.startswith(b"#?RGBE")):
        raise FormatError("missing Radiance signature", offset=0)
    pos = 0
    width = height = None
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise FormatError("header never ends", offset=pos)
        line = blob[pos:nl]
        pos = nl + 1
        if line.startswith(b"-Y"):
            parts = line.split()
            if len(parts) != 4 or parts[0] != b"-Y" or parts[2] != b"+X":
                raise FormatError(f"unsupported resolution line {line!r}", offset=pos - len(line) - 1)
            height, width = int(parts[1]), int(parts[3])
            break
        # comments, FORMAT=..., EXPOSURE=..., and the blank separator line
    if width is None or width <= 0 or height <= 0:
        raise FormatError("missing resolution line", offset=pos)
    rgbe = np.empty((height, width, 4), dtype=np.uint8)
    for row in range(height):
        pos = _read_hdr_scanline(blob, pos, rgbe[row])
    return _rgbe_to_float(rgbe)


def _read_hdr_scanline(blob: bytes, pos: int, out: np.ndarray) -> int:
    width = out.shape[0]
    if pos + 4 > len(blob):
        raise FormatError("truncated scanline", offset=len(blob))
    head = blob[pos : pos + 4]
    if head[0] == 2 and head[1] == 2 and (head[2] << 8 | head[3]) == width and width >= 8:
        # New-style: four independently run-length coded component planes.
        pos += 4
        for c in range(4):
            filled = 0
            while filled < width:
                if pos >= len(blob):
                    raise FormatError("truncated RLE data", offset=len(blob))
                count = blob[pos]
                pos += 1
                if count > 128:
                    run = count - 128
                    if pos >= len(blob) or filled + run > width:
                        raise FormatError("bad RLE run", offset=pos)
                    out[filled : filled + run, c] = blob[pos]
                    pos += 1
                    filled += run
                else:
                    if count == 0 or filled + count > width or pos + count > len(blob):
                        raise FormatError("bad RLE literal", offset=pos)
                    out[filled : filled + count, c] = np.frombuffer(blob, np.uint8, count, pos)
                    pos += count
                    filled += count
        return pos
    # Flat pixels, with old-style (1,1,1,n) repeat markers.
    filled = 0
    shift = 0
    while filled < width:
        if pos + 4 > len(blob):
            raise FormatError("truncated flat scanline", offset=len(blob))
        px = blob[pos : pos + 4]
        pos += 4
        if px[0] == 1 and px[1] == 1 and px[2] == 1:
            if filled == 0:
                raise FormatError("repeat marker before any pixel", offset=pos - 4)
            run = px[3] << shift
            if filled + run > width:
                raise FormatError("repeat overruns scanline", offset=pos - 4)
            out[filled : filled + run] = out[filled - 1]
            filled += run
            shift += 8
        else:
            out[filled] = np.frombuffer(px, np.uint8)
            filled += 1
            shift = 0
    return pos


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.where(exp == 0, 0.0, np.ldexp(1.0, exp - 136))
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


def write_hdr(path, image: np.ndarray) -> None:
    """Write an RGB float image as an uncompressed (flat) Radiance HDR."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    if np.any(img < 0) or not np.all(np.isfinite(img)):
        raise ValueError("HDR image values must be finite and non-negative")
    h, w = img.shape[:2]
    maxc = img.max(axis=2)
    _, exp = np.frexp(maxc)
    mul = np.where(maxc < 1e-32, 0.0, np.ldexp(256.0, -exp))
    rgbe = np.zeros((h, w, 4), dtype=np.uint8)
    rgbe[..., :3] = np.clip(img * mul[..., None], 0, 255).astype(np.uint8)
    rgbe[..., 3] = np.where(maxc < 1e-32, 0, exp + 128).astype(np.uint8)
    header = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n" + f"-Y {h} +X {w}\n".encode()
    Path(path).write_bytes(header + rgbe.tobytes())


# ---------------------------------------------------------------------------
# PFM


def read_pfm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    try:
        tokens = []
        pos = 0
        while len(tokens) < 4:
            nl = blob.index(b"\n", pos)
            tokens.extend(blob[pos:nl].split())
            pos = nl + 1
    except ValueError as e:
        raise FormatError("truncated PFM header", offset=len(blob)) from e
    magic = tokens[0]
    if magic not in (b"PF", b"Pf"):
        raise FormatError(f"bad PFM magic {magic!r}", offset=0)
    width, height = int(tokens[1]), int(tokens[2])
    scale = float(tokens[3])
    channels = 3 if magic == b"PF" else 1
    count = width * height * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(blob) - pos < 4 * count:
        raise FormatError(
            f"truncated PFM payload: need {4 * count} bytes, found {len(blob) - pos}",
            offset=len(blob),
        )
    data = np.frombuffer(blob, dtype, count, pos).astype(np.float64)
    img = data.reshape(height, width, channels)[::-1]  # rows are bottom-up
    if abs(scale) not in (0.0, 1.0):
        img = img * abs(scale)
    if channels == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img)


def write_pfm(path, image: np.ndarray) -> None:
    """Write an RGB float image as a little-endian color PFM."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    h, w = img.shape[:2]
    header = f"PF\n{w} {h}\n-1.0\n".encode()
    Path(path).write_bytes(header + img[::-1].astype("<f4").tobytes())
