"""Procedural toy scenes, occlusion-aware transport maps, and forward
rendering.

Camera model: orthographic, looking along -z. A pixel (row i, col j) of
an HxW image maps to screen x = (j + 0.5) / W * 2 - 1 (left to right)
and y = 1 - (i + 0.5) / H * 2 (top row is y ~ +1); primary rays start
at z = +10. The view vector (surface toward camera) is +z.

Transport maps hold, per masked pixel, the coefficients
t_k = sum_w V(p, w) max(0, n . w) Y_k(w) (4 pi / N) over N uniformly
sampled sphere directions, with binary shadow-ray visibility V. Dotting
them with light coefficients gives diffuse shading including occlusion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from relight.determinism import map_indexed, rng_for
from relight.imaging import BinaryMask, ImageTensor, read_mask_png, write_mask_png, write_png
from relight.sh import (
    EnvMap,
    ShLight,
    dominant_direction,
    envmap_from_function,
    eval_radiance,
    project_envmap,
    rotate_z,
    sh_basis_array,
    unoccluded_irradiance,
)
from relight.tensorio import read_tensor, write_tensor

_RAY_EPS = 1e-4          # shadow-ray origin offset along the normal
_CAMERA_Z = 10.0
_TRANSPORT_STREAM = 3    # rng_for sub-stream tag for transport sampling
_SCENE_STREAM = 5        # sub-stream tag for scene/light generation


# ---------------------------------------------------------------------------
# scene description


@dataclass(frozen=True)
class Texture:
    """Albedo field: 'constant', 'checker', or 'gradient' between two colors."""

    kind: str
    color_a: tuple
    color_b: tuple = (0.0, 0.0, 0.0)
    scale: float = 0.25
    axis: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "checker", "gradient"):
            raise ValueError(f"unknown texture kind '{self.kind}'")
        object.__setattr__(self, "color_a", tuple(float(c) for c in self.color_a))
        object.__setattr__(self, "color_b", tuple(float(c) for c in self.color_b))
        if len(self.color_a) != 3 or len(self.color_b) != 3:
            raise ValueError("texture colors must be RGB triples")
        if self.kind == "checker" and self.scale <= 0:
            raise ValueError(f"checker scale must be positive, got {self.scale}")
        if self.axis not in (0, 1, 2):
            raise ValueError(f"gradient axis must be 0, 1, or 2, got {self.axis}")

    def albedo_at(self, points: np.ndarray) -> np.ndarray:
        """Albedo for world points shaped (..., 3)."""
        a = np.asarray(self.color_a)
        b = np.asarray(self.color_b)
        if self.kind == "constant":
            return np.broadcast_to(a, points.shape[:-1] + (3,)).copy()
        if self.kind == "checker":
            cells = np.floor(points / self.scale).astype(np.int64)
            parity = (cells.sum(axis=-1) & 1).astype(np.float64)
            return a * (1.0 - parity[..., None]) + b * parity[..., None]
        # gradient: world coordinate along `axis`, mapped from [-1, 1]
        t = np.clip((points[..., self.axis] + 1.0) * 0.5, 0.0, 1.0)
        return a * (1.0 - t[..., None]) + b * t[..., None]


@dataclass(frozen=True)
class Gloss:
    """Blinn-Phong lobe: specular strength and exponent."""

    ks: float
    exponent: float = 16.0

    def __post_init__(self):
        if self.ks < 0:
            raise ValueError(f"ks must be >= 0, got {self.ks}")
        if self.exponent < 1:
            raise ValueError(f"exponent must be >= 1, got {self.exponent}")


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: Texture
    skin: bool = False
    gloss: Gloss | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3 or self.radius <= 0:
            raise ValueError(f"bad sphere: center {self.center}, radius {self.radius}")

    def roots(self, origins: np.ndarray, dirs: np.ndarray):
        """Both quadratic roots per ray, +inf where the ray misses."""
        oc = origins - np.asarray(self.center)
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius * self.radius
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = np.where(disc >= 0, -b - sq, np.inf)
        t1 = np.where(disc >= 0, -b + sq, np.inf)
        return t0, t1

    def entry_t(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        t0, _ = self.roots(origins, dirs)
        return np.where(t0 > 0, t0, np.inf)

    def hits_any(self, origins: np.ndarray, dirs: np.ndarray, min_t: float) -> np.ndarray:
        t0, t1 = self.roots(origins, dirs)
        return (t0 > min_t) & np.isfinite(t0) | (t1 > min_t) & np.isfinite(t1)

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        return (points - np.asarray(self.center)) / self.radius


@dataclass(frozen=True)
class Capsule:
    """Cylinder with spherical caps, from point_a to point_b."""

    point_a: tuple
    point_b: tuple
    radius: float
    texture: Texture
    skin: bool = False
    gloss: Gloss | None = None

    def __post_init__(self):
        object.__setattr__(self, "point_a", tuple(float(c) for c in self.point_a))
        object.__setattr__(self, "point_b", tuple(float(c) for c in self.point_b))
        if self.radius <= 0:
            raise ValueError(f"capsule radius must be positive, got {self.radius}")
        length = math.dist(self.point_a, self.point_b)
        if length < 1e-9:
            raise ValueError("capsule endpoints coincide; use a sphere")

    def _axis(self):
        a = np.asarray(self.point_a)
        b = np.asarray(self.point_b)
        axis = b - a
        length = float(np.linalg.norm(axis))
        return a, axis / length, length

    def _cylinder_roots(self, origins: np.ndarray, dirs: np.ndarray):
        """Roots against the finite open cylinder; +inf where invalid."""
        a, u, length = self._axis()
        oc = origins - a
        d_par = np.sum(dirs * u, axis=-1)
        o_par = np.sum(oc * u, axis=-1)
        d_perp = dirs - d_par[..., None] * u
        o_perp = oc - o_par[..., None] * u
        qa = np.sum(d_perp * d_perp, axis=-1)
        qb = np.sum(o_perp * d_perp, axis=-1)
        qc = np.sum(o_perp * o_perp, axis=-1) - self.radius * self.radius
        disc = qb * qb - qa * qc
        ok = (disc >= 0) & (qa > 1e-12)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        roots = []
        for sign in (-1.0, 1.0):
            t = np.where(ok, (-qb + sign * sq) / np.where(qa > 1e-12, qa, 1.0), 0.0)
            s = o_par + t * d_par  # axial coordinate of the hit
            roots.append(np.where(ok & (s >= 0) & (s <= length), t, np.inf))
        return roots

    def _all_roots(self, origins: np.ndarray, dirs: np.ndarray):
        roots = self._cylinder_roots(origins, dirs)
        for cap in (self.point_a, self.point_b):
            t0, t1 = Sphere(cap, self.radius, self.texture).roots(origins, dirs)
            roots.extend([t0, t1])
        return roots

    def entry_t(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        # Union of convex parts seen from outside: nearest positive root wins.
        entry = np.full(origins.shape[:-1], np.inf)
        for t in self._all_roots(origins, dirs):
            entry = np.minimum(entry, np.where(t > 0, t, np.inf))
        return entry

    def hits_any(self, origins: np.ndarray, dirs: np.ndarray, min_t: float) -> np.ndarray:
        hit = np.zeros(origins.shape[:-1], dtype=bool)
        for t in self._all_roots(origins, dirs):
            hit |= np.isfinite(t) & (t > min_t)
        return hit

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        a, u, length = self._axis()
        s = np.clip(np.sum((points - a) * u, axis=-1), 0.0, length)
        closest = a + s[..., None] * u
        n = points - closest
        return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)


@dataclass(frozen=True)
class Scene:
    primitives: tuple

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")


def scene_to_json(scene: Scene) -> list:
    out = []
    for p in scene.primitives:
        d = {
            "texture": {
                "kind": p.texture.kind,
                "color_a": list(p.texture.color_a),
                "color_b": list(p.texture.color_b),
                "scale": p.texture.scale,
                "axis": p.texture.axis,
            },
            "skin": p.skin,
        }
        if p.gloss is not None:
            d["gloss"] = {"ks": p.gloss.ks, "exponent": p.gloss.exponent}
        if isinstance(p, Sphere):
            d.update(type="sphere", center=list(p.center), radius=p.radius)
        else:
            d.update(type="capsule", point_a=list(p.point_a),
                     point_b=list(p.point_b), radius=p.radius)
        out.append(d)
    return out


def scene_from_json(spec: list) -> Scene:
    prims = []
    for d in spec:
        tex = Texture(kind=d["texture"]["kind"],
                      color_a=tuple(d["texture"]["color_a"]),
                      color_b=tuple(d["texture"]["color_b"]),
                      scale=d["texture"].get("scale", 0.25),
                      axis=d["texture"].get("axis", 1))
        gloss = Gloss(**d["gloss"]) if "gloss" in d else None
        if d["type"] == "sphere":
            prims.append(Sphere(tuple(d["center"]), d["radius"], tex,
                                skin=d.get("skin", False), gloss=gloss))
        elif d["type"] == "capsule":
            prims.append(Capsule(tuple(d["point_a"]), tuple(d["point_b"]),
                                 d["radius"], tex,
                                 skin=d.get("skin", False), gloss=gloss))
        else:
            raise ValueError(f"unknown primitive type '{d['type']}'")
    return Scene(tuple(prims))


def strip_gloss(scene: Scene) -> Scene:
    """The same scene with every specular lobe removed."""
    out = []
    for p in scene.primitives:
        if isinstance(p, Sphere):
            out.append(Sphere(p.center, p.radius, p.texture, p.skin, None))
        else:
            out.append(Capsule(p.point_a, p.point_b, p.radius, p.texture, p.skin, None))
    return Scene(tuple(out))


# ---------------------------------------------------------------------------
# geometry pass


@dataclass
class GeometryMaps:
    """Per-pixel scene attributes from the primary-ray pass."""

    normals: np.ndarray      # (H, W, 3), zero outside mask
    points: np.ndarray       # (H, W, 3) hit positions, zero outside mask
    mask: BinaryMask
    albedo: np.ndarray       # (H, W, 3)
    skin: np.ndarray         # (H, W) bool
    gloss_ks: np.ndarray     # (H, W)
    gloss_p: np.ndarray      # (H, W)


@dataclass
class TransportMap:
    """(H, W, 9) per-pixel transport coefficients, zero outside mask."""

    data: np.ndarray
    mask: BinaryMask

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 9:
            raise ValueError(f"transport must be HxWx9, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("transport coefficients must be finite")
        if arr.shape[:2] != self.mask.bits.shape:
            raise ValueError(
                f"transport shape {arr.shape[:2]} != mask shape {self.mask.bits.shape}")
        if np.any(arr[~self.mask.bits] != 0.0):
            raise ValueError("transport must be exactly zero outside the mask")
        self.data = arr


@dataclass
class RenderSample:
    """One dataset record: everything stage 1 trains against."""

    image: ImageTensor
    albedo: ImageTensor
    transport: TransportMap
    skin: np.ndarray
    normals: np.ndarray
    light: ShLight
    gloss_ks: np.ndarray | None = None
    gloss_p: np.ndarray | None = None

    @property
    def mask(self) -> BinaryMask:
        return self.transport.mask


def pixel_grid(h: int, w: int):
    """Screen coordinates of pixel centers: x (W,), y (H,)."""
    x = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    y = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    return x, y


def render_scene_geometry(scene: Scene, resolution: int) -> GeometryMaps:
    """Orthographic primary-ray pass: nearest primitive per pixel."""
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    h = w = int(resolution)
    xs, ys = pixel_grid(h, w)
    origins = np.zeros((h, w, 3))
    origins[..., 0] = xs[None, :]
    origins[..., 1] = ys[:, None]
    origins[..., 2] = _CAMERA_Z
    dirs = np.broadcast_to(np.array([0.0, 0.0, -1.0]), (h, w, 3))

    best_t = np.full((h, w), np.inf)
    best_idx = np.full((h, w), -1, dtype=np.int64)
    for idx, prim in enumerate(scene.primitives):
        t = prim.entry_t(origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, idx, best_idx)

    mask = best_idx >= 0
    points = np.zeros((h, w, 3))
    normals = np.zeros((h, w, 3))
    albedo = np.zeros((h, w, 3))
    skin = np.zeros((h, w), dtype=bool)
    gloss_ks = np.zeros((h, w))
    gloss_p = np.ones((h, w))
    hit_points = origins + np.where(mask, best_t, 0.0)[..., None] * dirs
    for idx, prim in enumerate(scene.primitives):
        sel = best_idx == idx
        if not sel.any():
            continue
        pts = hit_points[sel]
        points[sel] = pts
        normals[sel] = prim.normal_at(pts)
        albedo[sel] = prim.texture.albedo_at(pts)
        skin[sel] = prim.skin
        if prim.gloss is not None:
            gloss_ks[sel] = prim.gloss.ks
            gloss_p[sel] = prim.gloss.exponent
    return GeometryMaps(normals=normals, points=points, mask=BinaryMask(mask),
                        albedo=albedo, skin=skin, gloss_ks=gloss_ks, gloss_p=gloss_p)


# ---------------------------------------------------------------------------
# transport


def _sphere_dirs(rng: np.random.Generator, n: int) -> np.ndarray:
    """n uniform sphere directions, stratified over a g x g grid in
    (cos theta, phi) with jitter; the remainder is drawn unstratified."""
    g = int(math.isqrt(n))
    cells = g * g
    ii, jj = np.divmod(np.arange(cells), g)
    u = (np.stack([ii, jj], axis=1) + rng.random((cells, 2))) / g
    if n > cells:
        u = np.concatenate([u, rng.random((n - cells, 2))], axis=0)
    z = 1.0 - 2.0 * u[:, 0]
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * u[:, 1]
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def occluded(scene: Scene, origins: np.ndarray, dirs: np.ndarray,
             min_t: float = _RAY_EPS) -> np.ndarray:
    """True where a ray hits any primitive beyond min_t."""
    hit = np.zeros(origins.shape[:-1], dtype=bool)
    for prim in scene.primitives:
        hit |= prim.hits_any(origins, dirs, min_t)
    return hit


def transport_from_geometry(normals: np.ndarray, mask: BinaryMask, scene: Scene,
                            n_dirs: int = 512, seed: int = 0,
                            threads: int = 1) -> TransportMap:
    """Monte-Carlo transport coefficients for every masked pixel.

    Directions come from a per-pixel RNG stream keyed on the pixel's flat
    index, so the result is independent of chunking and thread count.
    Shadow rays start at the hit point nudged along the normal; hit
    points are re-derived from the scene so callers only pass what the
    geometry pass published.
    """
    if n_dirs < 256:
        raise ValueError(f"n_dirs must be >= 256, got {n_dirs}")
    h, w = mask.bits.shape
    if h != w:
        raise ValueError(f"mask must be square, got {h}x{w}")
    points = render_scene_geometry(scene, h).points

    flat_idx = np.flatnonzero(mask.bits.ravel())
    data = np.zeros((h * w, 9))
    chunks = [flat_idx[i:i + 256] for i in range(0, len(flat_idx), 256)]

    def run_chunk(ci):
        idxs = chunks[ci]
        p = idxs.size
        dirs = np.empty((p, n_dirs, 3))
        for k, pix in enumerate(idxs):
            dirs[k] = _sphere_dirs(rng_for(seed, _TRANSPORT_STREAM, int(pix)), n_dirs)
        n = normals.reshape(-1, 3)[idxs]
        pts = points.reshape(-1, 3)[idxs]
        cosine = np.maximum(0.0, np.einsum("pk,pnk->pn", n, dirs))
        o = pts[:, None, :] + _RAY_EPS * n[:, None, :]
        vis = ~occluded(scene, np.broadcast_to(o, dirs.shape), dirs)
        basis = sh_basis_array(dirs)
        return np.einsum("pn,pnk->pk", vis * cosine, basis) * (4.0 * math.pi / n_dirs)

    for ci, block in enumerate(map_indexed(run_chunk, range(len(chunks)), threads=threads)):
        data[chunks[ci]] = block
    return TransportMap(data=data.reshape(h, w, 9), mask=mask)


# ---------------------------------------------------------------------------
# forward rendering


def compose_shading(transport: TransportMap, light: ShLight,
                    clamp: bool = True) -> ImageTensor:
    """Per-pixel dot of transport with light coefficients, per channel.

    Negative dot products (SH ringing) are clamped to zero after the
    dot product; pass clamp=False for the raw linear value.
    """
    s = np.einsum("hwk,ck->hwc", transport.data, light.coeffs)
    if clamp:
        s = np.maximum(s, 0.0)
    s[~transport.mask.bits] = 0.0
    return ImageTensor(s, mask=transport.mask)


def reconstruct(albedo, shading) -> ImageTensor:
    """Pixel-wise albedo times shading."""
    a = albedo.data if isinstance(albedo, ImageTensor) else np.asarray(albedo, dtype=np.float64)
    s = shading.data if isinstance(shading, ImageTensor) else np.asarray(shading, dtype=np.float64)
    if a.shape != s.shape:
        raise ValueError(f"albedo shape {a.shape} != shading shape {s.shape}")
    mask = None
    for src in (shading, albedo):
        if isinstance(src, ImageTensor) and src.mask is not None:
            mask = src.mask
            break
    return ImageTensor(a * s, mask=mask)


def render_glossy(sample: RenderSample, light: ShLight,
                  view=(0.0, 0.0, 1.0)) -> ImageTensor:
    """Diffuse reconstruction plus a Blinn-Phong lobe per glossy pixel.

    The specular term uses a single directional light at the light's
    dominant direction (the smallest set that produces a controllable
    highlight), with the light's radiance in that direction as its
    color, clamped at zero.
    """
    diffuse = reconstruct(sample.albedo, compose_shading(sample.transport, light))
    if sample.gloss_ks is None or not np.any(sample.gloss_ks > 0):
        return diffuse
    v = np.asarray(view, dtype=np.float64)
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"view must be a unit vector, |view| = {norm}")
    l_dir = dominant_direction(light)
    half = l_dir + v
    half = half / np.linalg.norm(half)
    e_rgb = np.maximum(eval_radiance(light, l_dir), 0.0)
    n_dot_h = np.maximum(0.0, np.einsum("hwk,k->hw", sample.normals, half))
    lobe = sample.gloss_ks * np.power(n_dot_h, sample.gloss_p)
    img = diffuse.data + lobe[..., None] * e_rgb
    img[~sample.mask.bits] = 0.0
    return ImageTensor(img, mask=sample.mask)


# ---------------------------------------------------------------------------
# procedural lights and scenes


def procedural_envmap(rng: np.random.Generator, height: int = 64) -> EnvMap:
    """Sky-plus-sun radiance field: positive, smooth, directional."""
    ambient = rng.uniform(0.05, 0.25, size=3)
    sky = rng.uniform(0.2, 0.8, size=3)
    sun = rng.uniform(1.0, 4.0, size=3) * rng.uniform(0.5, 1.5)
    sharp = rng.uniform(8.0, 32.0)
    z = rng.uniform(-0.2, 0.9)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    sun_dir = np.array([r * math.cos(phi), r * math.sin(phi), z])

    def radiance(dirs):
        up = 0.5 + 0.5 * dirs[..., 2:3]
        blob = np.exp(sharp * (dirs @ sun_dir - 1.0))[..., None]
        return ambient + sky * up + sun * blob

    return envmap_from_function(radiance, height)


def normalize_light(light: ShLight, target: float = 0.85,
                    n_probe: int = 64) -> ShLight:
    """Scale so the brightest unoccluded diffuse shading hits `target`.

    Probed over a Fibonacci sphere of normals; keeps renders inside a
    display-friendly range without clipping most pixels.
    """
    k = np.arange(n_probe)
    z = 1.0 - 2.0 * (k + 0.5) / n_probe
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    normals = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    peak = float(unoccluded_irradiance(light, normals).max())
    if peak <= 0:
        raise ValueError("light has no positive irradiance to normalize")
    return light.scaled(target / peak)


_SKIN_TONES = [(0.87, 0.62, 0.48), (0.76, 0.51, 0.38), (0.55, 0.36, 0.25)]


def random_scene(rng: np.random.Generator, gloss_ks=(0.0, 0.0),
                 gloss_exp=(8.0, 32.0)) -> Scene:
    """A standing figure: torso capsule, skin head, two arm capsules."""

    def maybe_gloss():
        lo, hi = gloss_ks
        if hi <= 0:
            return None
        return Gloss(ks=float(rng.uniform(lo, hi)),
                     exponent=float(rng.uniform(*gloss_exp)))

    def cloth_texture():
        kind = ("constant", "checker", "gradient")[rng.integers(0, 3)]
        ca = tuple(rng.uniform(0.15, 0.9, size=3))
        cb = tuple(rng.uniform(0.15, 0.9, size=3))
        return Texture(kind=kind, color_a=ca, color_b=cb,
                       scale=float(rng.uniform(0.12, 0.3)), axis=int(rng.integers(0, 2)))

    skin_rgb = np.asarray(_SKIN_TONES[rng.integers(0, len(_SKIN_TONES))])
    skin_tex = Texture("constant", tuple(np.clip(skin_rgb + rng.normal(0, 0.03, 3), 0.05, 0.95)))

    torso_r = float(rng.uniform(0.22, 0.3))
    torso_top = float(rng.uniform(0.15, 0.3))
    head_r = float(rng.uniform(0.14, 0.2))
    prims = [
        Capsule((0.0, -0.6, 0.0), (0.0, torso_top, 0.0), torso_r,
                cloth_texture(), skin=False, gloss=maybe_gloss()),
        Sphere((float(rng.uniform(-0.05, 0.05)), torso_top + torso_r * 0.4 + head_r, 0.0),
               head_r, skin_tex, skin=True, gloss=maybe_gloss()),
    ]
    for side in (-1.0, 1.0):
        spread = float(rng.uniform(0.3, 0.55))
        drop = float(rng.uniform(-0.55, -0.3))
        depth = float(rng.uniform(-0.12, 0.12))
        prims.append(Capsule((side * (torso_r * 0.8), torso_top, 0.0),
                             (side * spread, drop, depth),
                             float(rng.uniform(0.07, 0.1)),
                             skin_tex if rng.random() < 0.5 else cloth_texture(),
                             skin=bool(rng.random() < 0.5), gloss=maybe_gloss()))
    return Scene(tuple(prims))


# ---------------------------------------------------------------------------
# dataset generation


@dataclass(frozen=True)
class DatasetConfig:
    """Knobs for the procedural train/test corpus."""

    out_dir: str
    train_scenes: int = 8
    test_scenes: int = 2
    n_lights: int = 10
    train_lights: int = 8
    resolution: int = 64
    n_dirs: int = 512
    seed: int = 0
    rotation_deg: float = 36.0
    gloss_ks: tuple = (0.0, 0.0)
    gloss_exp: tuple = (8.0, 32.0)
    envmap_height: int = 64

    def __post_init__(self):
        if self.train_scenes < 1 or self.test_scenes < 1:
            raise ValueError("scene counts must be >= 1")
        if not 0 < self.train_lights < self.n_lights:
            raise ValueError(
                f"need 0 < train_lights < n_lights, got {self.train_lights}/{self.n_lights}")


@dataclass
class DatasetManifest:
    path: Path
    seed: int
    resolution: int
    scenes: dict = field(default_factory=dict)    # split -> [scene json]
    lights: dict = field(default_factory=dict)    # split -> [light name]
    samples: list = field(default_factory=list)   # dicts with relative paths


def _sample_paths(split: str, sid: str) -> dict:
    base = f"{split}/{sid}"
    return {
        "image_png": f"{base}_image.png",
        "image": f"{base}_image.rlt",
        "albedo_png": f"{base}_albedo.png",
        "albedo": f"{base}_albedo.rlt",
        "transport": f"{base}_transport.rlt",
        "normals": f"{base}_normals.rlt",
        "mask": f"{base}_mask.png",
        "skin": f"{base}_skin.png",
        "gloss": f"{base}_gloss.rlt",
    }


def generate_dataset(config: DatasetConfig) -> DatasetManifest:
    """Render scene x light combinations and write them plus a manifest.

    Lights are procedural sky models projected once, brightness
    normalized, then rotated about z in `rotation_deg` steps, mirroring
    a rotate-augmented environment-map set. Scene and light splits are
    disjoint; every sample's image is re-renderable from its own
    stored components.
    """
    out_root = Path(config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "lights").mkdir(exist_ok=True)

    per_map = max(1, int(round(360.0 / config.rotation_deg)))
    n_base = -(-config.n_lights // per_map)  # ceil
    lights, light_names = [], []
    for b in range(n_base):
        env = procedural_envmap(rng_for(config.seed, _SCENE_STREAM, 0, b),
                                height=config.envmap_height)
        base = normalize_light(project_envmap(env))
        for rot in range(per_map):
            if len(lights) == config.n_lights:
                break
            angle = math.radians(config.rotation_deg) * rot
            name = f"light{b:02d}_rot{rot:02d}"
            lights.append(rotate_z(base, angle))
            light_names.append(name)
    for name, light in zip(light_names, lights):
        light.save(out_root / "lights" / f"{name}.json")

    light_split = {"train": light_names[:config.train_lights],
                   "test": light_names[config.train_lights:]}
    light_by_name = dict(zip(light_names, lights))

    manifest = DatasetManifest(path=out_root / "manifest.json", seed=config.seed,
                               resolution=config.resolution,
                               lights=light_split)
    scene_counts = {"train": config.train_scenes, "test": config.test_scenes}
    for split_idx, split in enumerate(("train", "test")):
        (out_root / split).mkdir(exist_ok=True)
        manifest.scenes[split] = []
        for s in range(scene_counts[split]):
            rng = rng_for(config.seed, _SCENE_STREAM, 1, split_idx, s)
            scene = random_scene(rng, gloss_ks=config.gloss_ks, gloss_exp=config.gloss_exp)
            manifest.scenes[split].append(scene_to_json(scene))
            geo = render_scene_geometry(scene, config.resolution)
            transport = transport_from_geometry(
                geo.normals, geo.mask, scene, n_dirs=config.n_dirs,
                seed=config.seed + 1000 * split_idx + s)
            for light_name in light_split[split]:
                light = light_by_name[light_name]
                sid = f"{s:03d}_{light_name}"
                sample = render_sample(geo, transport, light)
                write_sample(out_root, split, sid, sample)
                manifest.samples.append({
                    "id": sid, "split": split, "scene": s, "light": light_name,
                    "light_path": f"lights/{light_name}.json",
                    "paths": _sample_paths(split, sid),
                })
    payload = {
        "seed": manifest.seed,
        "resolution": manifest.resolution,
        "n_dirs": config.n_dirs,
        "gloss_ks": list(config.gloss_ks),
        "scenes": manifest.scenes,
        "lights": manifest.lights,
        "samples": manifest.samples,
    }
    manifest.path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return manifest


def render_sample(geo: GeometryMaps, transport: TransportMap,
                   light: ShLight) -> RenderSample:
    albedo = ImageTensor(geo.albedo, mask=geo.mask)
    diffuse = reconstruct(albedo, compose_shading(transport, light))
    sample = RenderSample(image=diffuse, albedo=albedo, transport=transport,
                          skin=geo.skin, normals=geo.normals, light=light,
                          gloss_ks=geo.gloss_ks, gloss_p=geo.gloss_p)
    if np.any(geo.gloss_ks > 0):
        sample.image = render_glossy(sample, light)
    return sample


def write_sample(root: Path, split: str, sid: str, sample: RenderSample):
    paths = _sample_paths(split, sid)
    write_png(root / paths["image_png"], np.clip(sample.image.data, 0.0, 1.0))
    write_tensor(root / paths["image"], sample.image.data.astype(np.float32))
    write_png(root / paths["albedo_png"], sample.albedo.data)
    write_tensor(root / paths["albedo"], sample.albedo.data.astype(np.float32))
    write_tensor(root / paths["transport"], sample.transport.data.astype(np.float32))
    write_tensor(root / paths["normals"], sample.normals.astype(np.float32))
    write_mask_png(root / paths["mask"], sample.mask)
    write_mask_png(root / paths["skin"], BinaryMask(sample.skin))
    gloss = np.stack([sample.gloss_ks, sample.gloss_p], axis=-1)
    write_tensor(root / paths["gloss"], gloss.astype(np.float32))


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def load_sample(manifest_path, entry: dict) -> RenderSample:
    """Rehydrate one manifest entry from its float-precision files."""
    root = Path(manifest_path).parent
    paths = entry["paths"]
    mask = read_mask_png(root / paths["mask"])
    skin = read_mask_png(root / paths["skin"]).bits
    image = np.asarray(read_tensor(root / paths["image"]), dtype=np.float64)
    albedo = np.asarray(read_tensor(root / paths["albedo"]), dtype=np.float64)
    transport = np.asarray(read_tensor(root / paths["transport"]), dtype=np.float64)
    normals = np.asarray(read_tensor(root / paths["normals"]), dtype=np.float64)
    gloss = np.asarray(read_tensor(root / paths["gloss"]), dtype=np.float64)
    light = ShLight.load(root / entry["light_path"])
    return RenderSample(
        image=ImageTensor(image, mask=mask),
        albedo=ImageTensor(albedo, mask=mask),
        transport=TransportMap(data=transport, mask=mask),
        skin=skin, normals=normals, light=light,
        gloss_ks=gloss[..., 0], gloss_p=gloss[..., 1])


def load_split(manifest_path, split: str) -> list:
    manifest = load_manifest(manifest_path)
    return [load_sample(manifest_path, e) for e in manifest["samples"]
            if e["split"] == split]
