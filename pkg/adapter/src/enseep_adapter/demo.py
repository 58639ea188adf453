"""Runnable toy example: two softmax sources scored end to end.

Creates three tiny label rasters, asks the core CLI to sample pixels,
wraps two toy 3-class softmax models as providers, exports the bundle,
and has the core validate and score it (single-model "ensembles", so
the score table has two rows).

Usage:
    enseep-adapter-demo --out demo_run [--force]
"""
from __future__ import annotations

import argparse
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from .export import ExportJob, ExportSource, export_bundle, read_raster, write_raster

TARGET_CLASSES = ("sky", "road", "tree")


def core_cli() -> list[str]:
    exe = shutil.which("enseep")
    if exe:
        return [exe]
    return [sys.executable, "-m", "enseep.cli"]


def run_core(*args: str) -> subprocess.CompletedProcess:
    cmd = core_cli() + [str(a) for a in args]
    print("+", " ".join(cmd))
    return subprocess.run(cmd, capture_output=True, text=True)


def make_rasters(raster_dir: Path, seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    raster_dir.mkdir(parents=True, exist_ok=True)
    for i in range(3):
        labels = rng.integers(0, len(TARGET_CLASSES), 400).astype(np.int32)
        labels[rng.random(400) < 0.05] = -1  # a few unlabeled pixels
        write_raster(labels, 20, 20, -1, raster_dir / f"img{i}.bin")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def toy_source(source_id: str, raster_dir: Path, sharpness: float, rot: int,
               performance: float) -> ExportSource:
    """A toy model: softmax over logits peaked at a rotated true label."""

    def provider(image_id: str, pixels: np.ndarray) -> np.ndarray:
        labels, _ = read_raster(raster_dir / f"{image_id}.bin")
        true = labels[pixels]
        logits = np.full((pixels.shape[0], 3), 0.0)
        logits[np.arange(pixels.shape[0]), (true + rot) % 3] = sharpness
        return softmax(logits)

    return ExportSource(
        source_id=source_id,
        dataset_name=f"toy-{source_id}",
        architecture_tag="toy-softmax",
        pretraining_tag="none",
        source_performance=performance,
        source_size=3,
        source_classes=3,
        space_id=f"{source_id}-space",
        class_names=("z0", "z1", "z2"),
        provider=provider,
    )


def run_demo(out: Path, force: bool = False) -> int:
    raster_dir = out / "rasters"
    make_rasters(raster_dir)

    indices = out / "indices.json"
    sample_args = ["sample", "--rasters", raster_dir, "--out", indices,
                   "--k", "50", "--seed", "0"]
    if force:
        sample_args.append("--force")
    result = run_core(*sample_args)
    if result.returncode != 0:
        print(result.stderr, file=sys.stderr)
        return result.returncode

    job = ExportJob(
        index_file=indices,
        raster_dir=raster_dir,
        target_space_id="toy-target",
        target_class_names=TARGET_CLASSES,
        sources=(
            toy_source("sharp", raster_dir, sharpness=4.0, rot=0, performance=0.9),
            toy_source("blurry", raster_dir, sharpness=1.0, rot=1, performance=0.4),
        ),
        out_dir=out / "bundle",
    )
    bundle = export_bundle(job)
    print(f"exported bundle -> {bundle}")

    result = run_core("validate", "--bundle", bundle)
    print(result.stdout, end="")
    if result.returncode != 0:
        print(result.stderr, file=sys.stderr)
        return result.returncode

    score_args = ["score", "--bundle", bundle, "--out", out / "scores",
                  "--ensemble-size", "1"]
    if force:
        score_args.append("--force")
    result = run_core(*score_args)
    print(result.stdout, end="")
    if result.returncode != 0:
        print(result.stderr, file=sys.stderr)
        return result.returncode

    print((out / "scores" / "score.csv").read_text(), end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_run")
    parser.add_argument("--force", action="store_true")
    args = parser.parse_args(argv)
    return run_demo(Path(args.out), force=args.force)


if __name__ == "__main__":
    sys.exit(main())
