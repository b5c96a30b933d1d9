"""Command-line entry point: one subcommand per pipeline stage.

Global flags (--seed, --threads, --out-dir, --config) are accepted by
every subcommand. A --config JSON file supplies defaults; flags given
explicitly on the command line win. Exit codes: 0 success, 1 domain
error (bad data, failed invariants), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from relight.determinism import ensure_single_thread_blas
from relight.errors import FormatError


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help="parallelism cap; never changes results (default: cores)")
    parser.add_argument("--out-dir", default=None, help="output directory (default .)")
    parser.add_argument("--config", default=None,
                        help="JSON file of defaults; explicit flags override it")


class _Args:
    """Parsed flags merged over --config values.

    Lookup order: explicit flag, config-file key (dashes or
    underscores), built-in fallback.
    """

    def __init__(self, ns: argparse.Namespace):
        self._ns = ns
        self._cfg = {}
        if ns.config:
            with open(ns.config) as f:
                cfg = json.load(f)
            if not isinstance(cfg, dict):
                raise ValueError(f"--config must hold a JSON object, got {type(cfg).__name__}")
            self._cfg = cfg

    def get(self, name: str, fallback=None):
        value = getattr(self._ns, name.replace("-", "_"), None)
        if value is not None:
            return value
        for key in (name, name.replace("-", "_")):
            if key in self._cfg:
                return self._cfg[key]
        return fallback

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    @property
    def threads(self) -> int:
        return int(self.get("threads", os.cpu_count() or 1))

    @property
    def out_dir(self) -> Path:
        return Path(self.get("out-dir", "."))


def _load_lights_array(path) -> list:
    from relight.sh import ShLight

    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of lights")
    return [ShLight(np.asarray(d["coeffs"], dtype=np.float64)) for d in data]


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_sh_project(a: _Args, ns):
    from relight.envmap_io import read_envmap
    from relight.sh import project_envmap

    light = project_envmap(read_envmap(ns.envmap))
    light.save(ns.output)
    print(ns.output)


def _cmd_sh_rotate(a: _Args, ns):
    from relight.sh import ShLight, rotate_z

    light = ShLight.load(ns.light)
    rotate_z(light, math.radians(float(a.get("deg", 0.0)))).save(ns.output)
    print(ns.output)


def _cmd_gen_lights(a: _Args, ns):
    from relight.determinism import rng_for
    from relight.envmap_io import write_hdr
    from relight.renderer import normalize_light, procedural_envmap
    from relight.sh import project_envmap, rotate_z

    count = int(a.get("count", 10))
    step_deg = float(a.get("rotation-deg", 36.0))
    per_map = max(1, int(round(360.0 / step_deg)))
    out = a.out_dir
    (out / "lights").mkdir(parents=True, exist_ok=True)
    names = []
    base_index = 0
    while len(names) < count:
        env = procedural_envmap(rng_for(a.seed, 5, 0, base_index),
                                height=int(a.get("height", 64)))
        write_hdr(out / "lights" / f"base{base_index:02d}.hdr", env.pixels)
        base = normalize_light(project_envmap(env))
        for rot in range(per_map):
            if len(names) == count:
                break
            name = f"light{base_index:02d}_rot{rot:02d}"
            rotate_z(base, math.radians(step_deg) * rot).save(out / "lights" / f"{name}.json")
            names.append(name)
        base_index += 1
    index = {"seed": a.seed, "rotation_deg": step_deg, "lights": names}
    (out / "lights" / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
    print(out / "lights" / "index.json")


def _cmd_gen_dataset(a: _Args, ns):
    from relight.renderer import DatasetConfig, generate_dataset

    gloss = a.get("gloss-ks", [0.0, 0.0])
    config = DatasetConfig(
        out_dir=str(a.out_dir),
        train_scenes=int(a.get("train-scenes", 8)),
        test_scenes=int(a.get("test-scenes", 2)),
        n_lights=int(a.get("n-lights", 10)),
        train_lights=int(a.get("train-lights", 8)),
        resolution=int(a.get("resolution", 64)),
        n_dirs=int(a.get("n-dirs", 512)),
        seed=a.seed,
        gloss_ks=(float(gloss[0]), float(gloss[1])))
    manifest = generate_dataset(config)
    print(manifest.path)


def _cmd_render(a: _Args, ns):
    from relight.determinism import rng_for
    from relight.renderer import (
        random_scene,
        render_sample,
        render_scene_geometry,
        scene_from_json,
        transport_from_geometry,
        write_sample,
    )
    from relight.sh import ShLight

    if ns.scene:
        scene = scene_from_json(json.loads(Path(ns.scene).read_text()))
    else:
        scene = random_scene(rng_for(a.seed, 5, 1, 0))
    light = ShLight.load(ns.light)
    res = int(a.get("resolution", 64))
    geo = render_scene_geometry(scene, res)
    transport = transport_from_geometry(geo.normals, geo.mask, scene,
                                        n_dirs=int(a.get("n-dirs", 512)),
                                        seed=a.seed, threads=a.threads)
    sample = render_sample(geo, transport, light)
    a.out_dir.mkdir(parents=True, exist_ok=True)
    write_sample(a.out_dir, ".", ns.name, sample)
    print(a.out_dir / f"{ns.name}_image.png")


def _cmd_relight_image(a: _Args, ns):
    from relight.imaging import read_mask_png, read_png, write_png
    from relight.pipeline import relight
    from relight.sh import ShLight

    image = read_png(ns.image)
    mask = read_mask_png(ns.mask)
    light = ShLight.load(ns.light)
    out = relight(ns.stage1, ns.stage2, image, mask, light)
    write_png(ns.output, np.clip(out.data, 0.0, 1.0))
    print(ns.output)


def _train_config(a: _Args, ns, manifest):
    from relight.optim import LrSchedule
    from relight.pipeline import TrainConfig

    return TrainConfig(
        manifest=str(manifest),
        out_dir=str(a.out_dir),
        epochs=int(a.get("epochs", 60)),
        resolution=int(a.get("resolution", 64)),
        base_width=int(a.get("width", 6)),
        seed=a.seed,
        schedule=LrSchedule(lr_max=float(a.get("lr-max", 1e-3)),
                            lr_min=float(a.get("lr-min", 1e-4)),
                            cycle_epochs=int(a.get("cycle-epochs", 20))),
        variant=str(a.get("variant", "b")),
        checkpoint_every=int(a.get("checkpoint-every", 0)))


def _cmd_train_stage1(a: _Args, ns):
    from relight.pipeline import train_stage1

    result = train_stage1(_train_config(a, ns, ns.manifest))
    print(result.checkpoint)


def _cmd_train_stage2(a: _Args, ns):
    from relight.pipeline import train_stage2

    result = train_stage2(_train_config(a, ns, ns.manifest), ns.stage1)
    print(result.checkpoint)


def _cmd_relight_video(a: _Args, ns):
    from relight.imaging import read_video_dir, write_video_dir
    from relight.video import relight_video

    video = read_video_dir(ns.video)
    lights = _load_lights_array(ns.lights)
    out = relight_video(ns.stage1, ns.stage2, video, lights)
    write_video_dir(a.out_dir, out)
    print(a.out_dir)


def _cmd_stabilize(a: _Args, ns):
    from relight.imaging import read_video_dir, write_video_dir
    from relight.video import DvpConfig, stabilize

    video = read_video_dir(ns.video)
    relit = read_video_dir(ns.relit)
    conditioning = bool(int(a.get("light-conditioning", 1)))
    lights = _load_lights_array(ns.lights) if ns.lights else None
    config = DvpConfig(epochs=int(a.get("epochs", 30)),
                       light_conditioning=conditioning,
                       seed=a.seed,
                       sf_weight=float(a.get("sf-weight", 1.0)),
                       l1_weight=float(a.get("l1-weight", 1.0)),
                       lr=float(a.get("lr", 1e-3)),
                       resolution=int(a.get("resolution", 64)),
                       base_width=int(a.get("width", 6)))
    out = stabilize(video, relit, lights, config)
    write_video_dir(a.out_dir, out)
    print(a.out_dir)


def _cmd_metrics(a: _Args, ns):
    from relight.imaging import ImageTensor, metrics_report, read_mask_png, read_png

    mask = read_mask_png(ns.mask)
    report = metrics_report(ImageTensor(read_png(ns.a)), ImageTensor(read_png(ns.b)), mask)
    text = json.dumps(report, indent=1, sort_keys=True)
    if ns.output:
        Path(ns.output).write_text(text)
    print(text)


def _cmd_flicker_report(a: _Args, ns):
    from relight.imaging import read_video_dir
    from relight.video import flicker_report, write_flicker_report

    before = read_video_dir(ns.before)
    after = read_video_dir(ns.after)
    reference = read_video_dir(ns.reference) if ns.reference else None
    report = flicker_report(before, after, reference)
    base = Path(ns.output)
    base.parent.mkdir(parents=True, exist_ok=True)
    write_flicker_report(report, base.with_suffix(".json"), base.with_suffix(".csv"))
    print(json.dumps({k: report[k] for k in
                      ("mean_before", "mean_after", "reduction_ratio", "light_correlation")},
                     indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relight",
        description="Two-stage human-figure relighting toolkit (toy scale).")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.set_defaults(fn=fn)
        return p

    p = add("sh-project", _cmd_sh_project, "project an environment map to 9 SH coefficients")
    p.add_argument("envmap", help=".hdr or .pfm environment map")
    p.add_argument("-o", "--output", required=True, help="output light JSON")

    p = add("sh-rotate", _cmd_sh_rotate, "rotate a light about the vertical axis")
    p.add_argument("light", help="light JSON")
    p.add_argument("--deg", type=float, default=None, help="rotation angle in degrees")
    p.add_argument("-o", "--output", required=True)

    p = add("gen-lights", _cmd_gen_lights, "generate procedural lights with rotations")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--rotation-deg", type=float, default=None)
    p.add_argument("--height", type=int, default=None, help="base envmap height")

    p = add("gen-dataset", _cmd_gen_dataset, "render a train/test scene-light corpus")
    for flag in ("--train-scenes", "--test-scenes", "--n-lights", "--train-lights",
                 "--resolution", "--n-dirs"):
        p.add_argument(flag, type=int, default=None)
    p.add_argument("--gloss-ks", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"), help="specular strength range; 0 0 = diffuse")

    p = add("render", _cmd_render, "render one scene under one light")
    p.add_argument("--scene", default=None, help="scene JSON (default: random)")
    p.add_argument("--light", required=True, help="light JSON")
    p.add_argument("--name", default="sample", help="output file stem")
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--n-dirs", type=int, default=None)

    p = add("relight-image", _cmd_relight_image, "relight one image with both stages")
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p.add_argument("--stage2", required=True, help="stage-2 checkpoint")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--light", required=True, help="target light JSON")
    p.add_argument("-o", "--output", required=True)

    p = add("train-stage1", _cmd_train_stage1, "train the decomposition net")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    for flag in ("--epochs", "--resolution", "--width", "--cycle-epochs",
                 "--checkpoint-every"):
        p.add_argument(flag, type=int, default=None)
    for flag in ("--lr-max", "--lr-min"):
        p.add_argument(flag, type=float, default=None)

    p = add("train-stage2", _cmd_train_stage2, "train the refinement net (stage 1 frozen)")
    p.add_argument("--manifest", required=True, help="photo dataset manifest JSON")
    p.add_argument("--stage1", required=True, help="stage-1 checkpoint")
    p.add_argument("--variant", choices=("a", "b", "c"), default=None)
    for flag in ("--epochs", "--resolution", "--width", "--cycle-epochs"):
        p.add_argument(flag, type=int, default=None)
    for flag in ("--lr-max", "--lr-min"):
        p.add_argument(flag, type=float, default=None)

    p = add("relight-video", _cmd_relight_video, "relight every frame independently")
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--video", required=True, help="frame directory")
    p.add_argument("--lights", required=True, help="JSON array of per-frame lights")

    p = add("stabilize", _cmd_stabilize, "remove flicker with a video-prior fit")
    p.add_argument("--video", required=True, help="original frame directory")
    p.add_argument("--relit", required=True, help="flickery relit frame directory")
    p.add_argument("--lights", default=None, help="JSON array of per-frame lights")
    p.add_argument("--light-conditioning", type=int, choices=(0, 1), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)
    for flag in ("--sf-weight", "--l1-weight", "--lr"):
        p.add_argument(flag, type=float, default=None)

    p = add("metrics", _cmd_metrics, "masked RMSE/SSIM report for an image pair")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("-o", "--output", default=None, help="also write the JSON here")

    p = add("flicker-report", _cmd_flicker_report, "temporal-MAE comparison of two videos")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--reference", default=None, help="clean reference video")
    p.add_argument("-o", "--output", required=True, help="report base path (.json/.csv)")

    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    ensure_single_thread_blas()
    try:
        args = _Args(ns)
        ns.fn(args, ns)
    except (ValueError, FormatError, FloatingPointError, RuntimeError,
            OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
