"""Radiance HDR and PFM readers/writers, cross-checked against OpenCV."""

import numpy as np
import pytest

from relight.envmap_io import read_envmap, read_hdr, read_pfm, write_hdr, write_pfm
from relight.errors import FormatError

cv2 = pytest.importorskip("cv2")


def sample_image(h=16, w=32, seed=0):
    rng = np.random.default_rng(seed)
    # Mix of dim and bright values so RGBE exponents actually vary.
    img = rng.uniform(0.0, 1.0, size=(h, w, 3))
    img[::3] *= 40.0
    img[1::3] *= 0.02
    return img


def rgbe_tolerance(img):
    # Shared-exponent format: quantization error scales with the largest
    # channel of each pixel, not with the channel itself.
    return img.max(axis=-1, keepdims=True) / 128 + 1e-6


def test_hdr_round_trip_within_rgbe_precision(tmp_path):
    img = sample_image()
    path = tmp_path / "m.hdr"
    write_hdr(path, img)
    back = read_hdr(path)
    assert np.all(np.abs(back - img) <= rgbe_tolerance(img))


def test_hdr_matches_opencv_reader(tmp_path):
    img = sample_image(seed=1)
    path = tmp_path / "m.hdr"
    write_hdr(path, img)
    ours = read_hdr(path)
    ref = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    assert ref is not None
    ref = ref[..., ::-1].astype(np.float64)  # BGR to RGB
    np.testing.assert_allclose(ours, ref, rtol=1e-5, atol=1e-7)


def test_hdr_reads_opencv_output(tmp_path):
    img = sample_image(seed=2).astype(np.float32)
    path = tmp_path / "cv.hdr"
    assert cv2.imwrite(str(path), img[..., ::-1])
    ours = read_hdr(path)
    assert np.all(np.abs(ours - img) <= rgbe_tolerance(img.astype(np.float64)))


def test_pfm_round_trip_exact(tmp_path):
    img = sample_image(seed=3).astype(np.float32)
    path = tmp_path / "m.pfm"
    write_pfm(path, img)
    np.testing.assert_array_equal(read_pfm(path), img)


def test_pfm_matches_opencv(tmp_path):
    img = sample_image(seed=4).astype(np.float32)
    path = tmp_path / "m.pfm"
    write_pfm(path, img)
    ref = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    assert ref is not None
    np.testing.assert_allclose(read_pfm(path), ref[..., ::-1], atol=0.0)


def test_read_envmap_dispatches_on_suffix(tmp_path):
    img = np.abs(sample_image(h=8, w=16, seed=5))
    write_hdr(tmp_path / "e.hdr", img)
    write_pfm(tmp_path / "e.pfm", img.astype(np.float32))
    env_h = read_envmap(tmp_path / "e.hdr")
    env_p = read_envmap(tmp_path / "e.pfm")
    assert env_h.pixels.shape == (8, 16, 3)
    np.testing.assert_allclose(env_p.pixels, img, rtol=1e-6)
    with pytest.raises(ValueError):
        read_envmap(tmp_path / "e.exr")


def test_hdr_bad_magic(tmp_path):
    path = tmp_path / "bad.hdr"
    path.write_bytes(b"#?NOTRADIANCE\n\n-Y 4 +X 8\n" + b"\x00" * 64)
    with pytest.raises(FormatError):
        read_hdr(path)


def test_hdr_truncated_scanline(tmp_path):
    img = sample_image()
    path = tmp_path / "t.hdr"
    write_hdr(path, img)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        read_hdr(path)


def test_pfm_bad_header(tmp_path):
    path = tmp_path / "bad.pfm"
    path.write_bytes(b"Px\n8 4\n-1.0\n" + b"\x00" * 384)
    with pytest.raises(FormatError):
        read_pfm(path)


def test_zero_pixels_survive_hdr(tmp_path):
    img = np.zeros((4, 8, 3))
    img[2, 3] = [1.0, 0.5, 0.25]
    path = tmp_path / "z.hdr"
    write_hdr(path, img)
    back = read_hdr(path)
    assert back[0, 0].tolist() == [0.0, 0.0, 0.0]
    assert np.all(np.abs(back[2, 3] - img[2, 3]) <= rgbe_tolerance(img)[2, 3])
