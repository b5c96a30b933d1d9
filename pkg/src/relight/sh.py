"""Second-order real spherical harmonics: basis, projection, z-rotation.

Convention (fixed for the whole repo, documented here and enforced by
tests): real SH without the Condon-Shortley phase, coefficient order

    index:  0      1       2      3      4       5       6      7      8
    (l,m): (0,0) (1,-1)  (1,0)  (1,1) (2,-2)  (2,-1)  (2,0)  (2,1)  (2,2)

with z the vertical axis. Environment maps are equirectangular (width =
2 x height), theta = 0 (the +z pole) at the top row, and azimuth phi = 0
(the +x half-plane) at the image center column, increasing to the right.

Lights store one 9-vector per color channel (R, G, B), channel-major.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Basis normalization constants.
SH_C0 = 0.28209479177387814  # 1 / (2 sqrt(pi))
SH_C1 = 0.4886025119029199  # sqrt(3 / (4 pi))
SH_C2_0 = 1.0925484305920792  # sqrt(15 / (4 pi))
SH_C2_1 = 0.31539156525252005  # sqrt(5 / (16 pi))
SH_C2_2 = 0.5462742152960396  # sqrt(15 / (16 pi))

N_COEFFS = 9
N_CHANNELS = 3

# Zonal coefficients of the clamped cosine max(0, cos theta):
# integral of cos(theta) * Y_l0 over the upper hemisphere.
CLAMPED_COSINE_ZONAL = (
    0.8862269254527580,  # sqrt(pi) / 2
    1.0233267079464885,  # sqrt(pi / 3)
    0.4954159122007514,  # sqrt(5 pi) / 8
)
# Per-band convolution factors sqrt(4 pi / (2l + 1)) * zonal_l, giving the
# irradiance of an unoccluded surface directly from light coefficients.
IRRADIANCE_BAND_FACTORS = (math.pi, 2.0 * math.pi / 3.0, math.pi / 4.0)
_BAND_OF_INDEX = np.array([0, 1, 1, 1, 2, 2, 2, 2, 2])


@dataclass(frozen=True)
class ShLight:
    """Distant illumination as 3 x 9 second-order SH coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.coeffs, dtype=np.float64)
        if arr.shape != (N_CHANNELS, N_COEFFS):
            raise ValueError(f"light coefficients must be (3, 9), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("light coefficients must be finite")
        object.__setattr__(self, "coeffs", arr)

    def to_json(self) -> str:
        return json.dumps({"coeffs": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "ShLight":
        data = json.loads(text)
        return cls(np.asarray(data["coeffs"], dtype=np.float64))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ShLight":
        with open(path) as f:
            return cls.from_json(f.read())

    def scaled(self, factor) -> "ShLight":
        return ShLight(self.coeffs * np.asarray(factor, dtype=np.float64).reshape(-1, 1))


@dataclass(frozen=True)
class EnvMap:
    """Equirectangular radiance map, H x W x 3 with W = 2H."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"env map must be HxWx3, got {arr.shape}")
        h, w = arr.shape[:2]
        if w != 2 * h:
            raise ValueError(f"env map width must be 2x height, got {h}x{w}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("env map must be finite")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LightProvenance:
    source: str
    angle_deg: float


@dataclass
class LightSet:
    """Ordered lights with their source map + rotation provenance."""

    lights: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    def __len__(self):
        return len(self.lights)


def sh_basis_array(directions: np.ndarray) -> np.ndarray:
    """Evaluate the 9 basis functions for unit vectors, shape (..., 3) -> (..., 9)."""
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = np.empty(d.shape[:-1] + (N_COEFFS,), dtype=np.float64)
    out[..., 0] = SH_C0
    out[..., 1] = SH_C1 * y
    out[..., 2] = SH_C1 * z
    out[..., 3] = SH_C1 * x
    out[..., 4] = SH_C2_0 * x * y
    out[..., 5] = SH_C2_0 * y * z
    out[..., 6] = SH_C2_1 * (3.0 * z * z - 1.0)
    out[..., 7] = SH_C2_0 * x * z
    out[..., 8] = SH_C2_2 * (x * x - y * y)
    return out


def sh_basis(direction) -> np.ndarray:
    """Basis values for a single unit direction.

    Raises:
        ValueError: if the direction is non-finite or not unit length
            within 1e-6.
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (3,) or not np.all(np.isfinite(d)):
        raise ValueError(f"direction must be a finite 3-vector, got {direction!r}")
    norm = float(np.linalg.norm(d))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"direction must be unit length, |d| = {norm}")
    return sh_basis_array(d)


def eval_radiance(light: ShLight, direction) -> np.ndarray:
    """Radiance of the SH light toward ``direction``, per channel (3,)."""
    basis = sh_basis(direction)
    return light.coeffs @ basis


def envmap_directions(height: int, width: int):
    """Texel-center directions and solid-angle weights for a lat-long grid.

    Returns (directions (H, W, 3), weights (H, 1)) where the weight of a
    texel is sin(theta) * dtheta * dphi.
    """
    theta = (np.arange(height) + 0.5) / height * np.pi
    phi = ((np.arange(width) + 0.5) / width - 0.5) * 2.0 * np.pi
    st, ct = np.sin(theta), np.cos(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    dirs = np.empty((height, width, 3), dtype=np.float64)
    dirs[..., 0] = st[:, None] * cp[None, :]
    dirs[..., 1] = st[:, None] * sp[None, :]
    dirs[..., 2] = ct[:, None]
    weights = (st * (np.pi / height) * (2.0 * np.pi / width))[:, None]
    return dirs, weights


def envmap_from_function(fn, height: int = 128) -> EnvMap:
    """Build an EnvMap by evaluating ``fn(directions) -> (..., 3) or (...)``."""
    dirs, _ = envmap_directions(height, 2 * height)
    vals = np.asarray(fn(dirs), dtype=np.float64)
    if vals.ndim == 2:
        vals = np.repeat(vals[..., None], 3, axis=-1)
    return EnvMap(vals)


def project_envmap(env: EnvMap, n_samples: int = 1000) -> ShLight:
    """Project an environment map onto the 9-term SH basis.

    Deterministic solid-angle-weighted texel summation over every texel;
    ``n_samples`` is the minimum texel budget and must be at least 1000.

    Raises:
        ValueError: if ``n_samples`` < 1000 or the map has fewer texels.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    h, w = env.height, env.width
    if h * w < n_samples:
        raise ValueError(f"env map has {h * w} texels, fewer than n_samples={n_samples}")
    dirs, weights = envmap_directions(h, w)
    basis = sh_basis_array(dirs)  # (H, W, 9)
    weighted = basis * weights[..., None]  # (H, W, 9)
    # Fixed summation order: reduce each row, then the row axis.
    per_row = np.einsum("hwc,hwk->hck", env.pixels, weighted)
    return ShLight(per_row.sum(axis=0))


def rotate_z(light: ShLight, phi: float) -> ShLight:
    """Rotate the light about the vertical z axis by ``phi`` radians.

    Band 0 and the m = 0 terms are unchanged; each |m| pair mixes through
    a 2x2 rotation block with angle m * phi.
    """
    if not np.isfinite(phi):
        raise ValueError(f"rotation angle must be finite, got {phi}")
    c = light.coeffs
    out = c.copy()
    for m, (i_neg, i_pos) in ((1, (1, 3)), (1, (5, 7)), (2, (4, 8))):
        cm, sm = math.cos(m * phi), math.sin(m * phi)
        pos, neg = c[:, i_pos], c[:, i_neg]
        out[:, i_pos] = cm * pos - sm * neg
        out[:, i_neg] = sm * pos + cm * neg
    return ShLight(out)


def rotate_envmap_z(env: EnvMap, phi: float) -> EnvMap:
    """Rotate an environment map about z by ``phi`` (column shift).

    Uses an exact integer roll when ``phi`` lands on a texel boundary,
    otherwise linear interpolation between adjacent columns.
    """
    if not np.isfinite(phi):
        raise ValueError(f"rotation angle must be finite, got {phi}")
    w = env.width
    shift = phi / (2.0 * np.pi) * w
    nearest = round(shift)
    if abs(shift - nearest) < 1e-9:
        return EnvMap(np.roll(env.pixels, nearest % w, axis=1))
    lo = math.floor(shift)
    frac = shift - lo
    rolled = np.roll(env.pixels, lo % w, axis=1)
    rolled_next = np.roll(env.pixels, (lo + 1) % w, axis=1)
    return EnvMap((1.0 - frac) * rolled + frac * rolled_next)


def expand_light_set(maps, interval_deg: float, names=None) -> LightSet:
    """Project each map and expand by z rotations at ``interval_deg`` steps.

    The output has len(maps) * (360 / interval_deg) entries; entry (i, k)
    is rotate_z(project(maps[i]), k * interval).

    Raises:
        ValueError: if 360 is not an integer multiple of ``interval_deg``.
    """
    if interval_deg <= 0:
        raise ValueError(f"interval must be positive, got {interval_deg}")
    n_rot = round(360.0 / interval_deg)
    if n_rot < 1 or abs(n_rot * interval_deg - 360.0) > 1e-9:
        raise ValueError(f"360 is not divisible by interval {interval_deg}")
    if names is None:
        names = [f"map{i:03d}" for i in range(len(maps))]
    out = LightSet()
    for name, env in zip(names, maps):
        base = project_envmap(env)
        for k in range(n_rot):
            angle = k * interval_deg
            out.lights.append(rotate_z(base, math.radians(angle)))
            out.provenance.append(LightProvenance(source=name, angle_deg=angle))
    return out


def unoccluded_irradiance(light: ShLight, normals: np.ndarray) -> np.ndarray:
    """Closed-form diffuse shading for unoccluded normals, (..., 3) -> (..., 3).

    Convolves the light with the clamped cosine analytically; serves both
    light normalization and as an independent check of sampled transport.
    """
    basis = sh_basis_array(normals)  # (..., 9)
    factors = np.asarray(IRRADIANCE_BAND_FACTORS)[_BAND_OF_INDEX]  # (9,)
    return np.einsum("...k,ck->...c", basis * factors, light.coeffs)


def dominant_direction(light: ShLight) -> np.ndarray:
    """Unit direction of the strongest linear-band luminance; +z fallback."""
    lum = np.array([0.2126, 0.7152, 0.0722]) @ light.coeffs  # (9,)
    v = np.array([lum[3], lum[1], lum[2]])  # (x, y, z) from (1,1), (1,-1), (1,0)
    n = np.linalg.norm(v)
    if n < 1e-9:
        return np.array([0.0, 0.0, 1.0])
    return v / n
