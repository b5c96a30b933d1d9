"""Container format tests: raw tensors and checkpoint files.

The byte-level oracle builds expected files with struct/tobytes alone,
independent of the writer under test.
"""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relight.errors import FormatError
from relight.tensorio import load_checkpoint, read_tensor, save_checkpoint, write_tensor


def reference_bytes(arr: np.ndarray) -> bytes:
    """Spec-by-hand encoding: magic, ndim, dims, row-major f32 LE."""
    out = b"RLT1" + struct.pack("<I", arr.ndim)
    for d in arr.shape:
        out += struct.pack("<I", d)
    return out + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def test_bytes_match_reference_encoding(tmp_path):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 7.0
    path = tmp_path / "t.rlt"
    write_tensor(path, arr)
    assert path.read_bytes() == reference_bytes(arr)


def test_round_trip_preserves_values_and_shape(tmp_path):
    arr = np.float32(np.random.default_rng(0).normal(size=(5, 1, 7)))
    path = tmp_path / "t.rlt"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == (5, 1, 7)
    assert back.dtype == np.float32
    np.testing.assert_array_equal(back, arr)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=4))
def test_round_trip_arbitrary_shapes(tmp_path_factory, dims):
    arr = np.zeros(dims, dtype=np.float32) + 0.5
    path = tmp_path_factory.mktemp("rt") / "t.rlt"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == tuple(dims)
    np.testing.assert_array_equal(back, arr)


def test_scalar_promoted_to_length_one(tmp_path):
    # The format has no 0-d encoding; scalars land as shape (1,).
    path = tmp_path / "s.rlt"
    write_tensor(path, np.float32(3.25))
    back = read_tensor(path)
    assert back.shape == (1,)
    assert back[0] == np.float32(3.25)


def test_bad_magic_reports_offset_zero(tmp_path):
    path = tmp_path / "bad.rlt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError) as err:
        read_tensor(path)
    assert err.value.offset == 0


def test_truncated_payload_reports_offset(tmp_path):
    arr = np.ones((3, 3), dtype=np.float32)
    path = tmp_path / "trunc.rlt"
    write_tensor(path, arr)
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(FormatError):
        read_tensor(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "extra.rlt"
    write_tensor(path, np.ones(2, dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(FormatError):
        read_tensor(path)


def test_absurd_ndim_rejected(tmp_path):
    path = tmp_path / "dims.rlt"
    path.write_bytes(b"RLT1" + struct.pack("<I", 99))
    with pytest.raises(FormatError):
        read_tensor(path)


def test_checkpoint_round_trip(tmp_path):
    tensors = {
        "enc0.w": np.random.default_rng(1).normal(size=(3, 3, 2, 4)).astype(np.float32),
        "enc0.b": np.zeros(4, dtype=np.float32),
    }
    path = tmp_path / "c.rltc"
    save_checkpoint(path, tensors, step=17, meta={"kind": "test", "width": 4})
    back, step, meta = load_checkpoint(path)
    assert step == 17
    assert meta["kind"] == "test" and meta["width"] == 4
    assert set(back) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_rejects_header_shape_lie(tmp_path):
    path = tmp_path / "c.rltc"
    save_checkpoint(path, {"w": np.ones((2, 2), dtype=np.float32)}, step=0, meta={})
    blob = bytearray(path.read_bytes())
    # Corrupt the declared shape inside the JSON header.
    idx = blob.find(b"[2, 2]")
    assert idx > 0
    blob[idx:idx + 6] = b"[2, 3]"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_checkpoint_deterministic_bytes(tmp_path):
    tensors = {"a": np.arange(6, dtype=np.float32), "b": np.eye(3, dtype=np.float32)}
    p1, p2 = tmp_path / "1.rltc", tmp_path / "2.rltc"
    save_checkpoint(p1, tensors, step=3, meta={"x": 1})
    save_checkpoint(p2, tensors, step=3, meta={"x": 1})
    assert p1.read_bytes() == p2.read_bytes()
