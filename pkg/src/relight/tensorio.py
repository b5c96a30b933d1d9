"""RLT1 float-tensor files and the checkpoint container built on them.

RLT1 layout (little-endian throughout):

    bytes 0..3   magic ``RLT1``
    bytes 4..7   u32 ndim
    next         ndim x u32 dims
    rest         row-major float32 payload, prod(dims) values

Checkpoints are a JSON header followed by concatenated RLT1 blocks:

    bytes 0..3   magic ``RLTC``
    bytes 4..7   u32 header length
    next         UTF-8 JSON: {"format", "step", "meta", "tensors": [{name, shape}]}
    rest         one RLT1 block per tensors[] entry, in order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from relight.errors import FormatError

MAGIC = b"RLT1"
CKPT_MAGIC = b"RLTC"
_MAX_NDIM = 8
_MAX_ELEMENTS = 1 << 32


def write_tensor(path, data) -> None:
    """Write a float tensor as an RLT1 file (values cast to float32)."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float32))
    with open(path, "wb") as f:
        f.write(_encode(arr))


def read_tensor(path) -> np.ndarray:
    """Read an RLT1 file back as a float32 array."""
    blob = Path(path).read_bytes()
    arr, consumed = _decode(blob, 0)
    if consumed != len(blob):
        raise FormatError(
            f"trailing data after tensor payload ({len(blob) - consumed} extra bytes)",
            offset=consumed,
        )
    return arr


def _encode(arr: np.ndarray) -> bytes:
    dims = arr.shape if arr.ndim > 0 else (1,)
    head = MAGIC + struct.pack("<I", len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    return head + arr.reshape(-1).astype("<f4").tobytes()


def _decode(blob: bytes, base: int):
    """Decode one RLT1 block starting at ``base``; returns (array, end offset)."""
    if len(blob) < base + 8:
        raise FormatError("file too short for RLT1 header", offset=len(blob))
    if blob[base : base + 4] != MAGIC:
        raise FormatError(f"bad magic {blob[base:base + 4]!r}, expected {MAGIC!r}", offset=base)
    (ndim,) = struct.unpack_from("<I", blob, base + 4)
    if ndim == 0 or ndim > _MAX_NDIM:
        raise FormatError(f"unsupported ndim {ndim}", offset=base + 4)
    dims_off = base + 8
    dims_end = dims_off + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError("truncated dim list", offset=len(blob))
    dims = struct.unpack_from(f"<{ndim}I", blob, dims_off)
    n = 1
    for i, d in enumerate(dims):
        n *= int(d)
        if n > _MAX_ELEMENTS:
            raise FormatError(f"dim product overflows element cap {_MAX_ELEMENTS}", offset=dims_off + 4 * i)
    end = dims_end + 4 * n
    if len(blob) < end:
        raise FormatError(
            f"truncated payload: expected {4 * n} bytes, found {len(blob) - dims_end}",
            offset=len(blob),
        )
    arr = np.frombuffer(blob[dims_end:end], dtype="<f4").reshape(dims)
    return arr.copy(), end


def save_checkpoint(path, tensors: dict, step: int = 0, meta: dict | None = None) -> None:
    """Write named tensors plus metadata as one RLTC container."""
    names = list(tensors.keys())
    arrays = [np.asarray(tensors[k], dtype=np.float32) for k in names]
    header = {
        "format": "rltc-v1",
        "step": int(step),
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(a.shape)} for k, a in zip(names, arrays)],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes)
        for a in arrays:
            f.write(_encode(np.ascontiguousarray(a)))


def load_checkpoint(path):
    """Read an RLTC container; returns (tensors dict, step, meta dict)."""
    blob = Path(path).read_bytes()
    if len(blob) < 8 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}", offset=0)
    (hlen,) = struct.unpack_from("<I", blob, 4)
    if len(blob) < 8 + hlen:
        raise FormatError("truncated checkpoint header", offset=len(blob))
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable checkpoint header: {e}", offset=8) from e
    tensors = {}
    off = 8 + hlen
    for entry in header["tensors"]:
        arr, off = _decode(blob, off)
        if list(arr.shape) != list(entry["shape"]):
            raise FormatError(
                f"tensor {entry['name']!r} shape {list(arr.shape)} != header {entry['shape']}",
                offset=off,
            )
        tensors[entry["name"]] = arr
    return tensors, int(header.get("step", 0)), header.get("meta", {})
