"""Refinement-architecture ablation on the glossy corpus.

Trains the three stage-2 wiring variants with identical seed and budget
against the same frozen stage-1 network and prints held-out RMSE:

  a: direct prediction head
  b: residual added to the stage-1 reconstruction (zero-init head)
  c: variant b plus the tiled inferred-light input
"""

import argparse
import json
import time
from pathlib import Path

from relight.pipeline import (
    TrainConfig,
    evaluate_stage1,
    evaluate_two_stage,
    train_stage1,
    train_stage2,
)
from relight.renderer import DatasetConfig, generate_dataset, load_split


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--stage1-epochs", type=int, default=20)
    ap.add_argument("--stage2-epochs", type=int, default=10)
    ap.add_argument("--stage1-ckpt", default=None,
                    help="reuse an existing stage-1 checkpoint")
    args = ap.parse_args()

    out = Path(args.out_dir)
    t0 = time.perf_counter()
    diffuse = generate_dataset(DatasetConfig(
        out_dir=str(out / "diffuse"), resolution=args.resolution, seed=args.seed))
    glossy = generate_dataset(DatasetConfig(
        out_dir=str(out / "glossy"), resolution=args.resolution, seed=args.seed,
        gloss_ks=(0.3, 0.8)))

    if args.stage1_ckpt:
        stage1 = args.stage1_ckpt
    else:
        stage1 = train_stage1(TrainConfig(
            manifest=str(diffuse.path), out_dir=str(out / "stage1"),
            epochs=args.stage1_epochs, resolution=args.resolution,
            seed=args.seed)).checkpoint
        print(f"stage 1 trained ({time.perf_counter() - t0:.0f}s)")

    test = load_split(glossy.path, "test")
    baseline = evaluate_stage1(stage1, test)
    rows = {"stage1_only": baseline}
    for variant in ("a", "b", "c"):
        result = train_stage2(TrainConfig(
            manifest=str(glossy.path), out_dir=str(out / f"stage2_{variant}"),
            epochs=args.stage2_epochs, resolution=args.resolution,
            seed=args.seed, variant=variant), stage1)
        rows[variant] = evaluate_two_stage(stage1, result.net, test)
        print(f"variant {variant}: test RMSE {rows[variant]:.4f} "
              f"({time.perf_counter() - t0:.0f}s)")

    print(f"\n{'run':<12} {'test RMSE':>10}")
    for name, rmse in rows.items():
        print(f"{name:<12} {rmse:10.4f}")
    (out / "ablation.json").write_text(json.dumps(
        {"seed": args.seed, "rmse": rows}, indent=1, sort_keys=True))
    print(out / "ablation.json")


if __name__ == "__main__":
    main()
