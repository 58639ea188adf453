#!/usr/bin/env python3
"""Measure batch-scoring throughput at configurable problem sizes.

Generates a synthetic bundle in a temp directory, scores it once per
requested worker count, verifies the outputs are byte-identical, and
prints wall-clock numbers. Defaults reproduce the full-pool scale:
64 sources, 50k samples, 30 target classes, 41664 ensembles.

Usage:
    python scripts/profile_scoring_throughput.py [--n 50000] [--sources 64]
"""
import argparse
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from enseep.cli import main as cli_main
from enseep.datamodel import write_bundle
from enseep.synthetic import (
    SyntheticSourceSpec,
    gen_source,
    gen_target,
    make_metas,
    rotated_group_map,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=50000)
    parser.add_argument("--sources", type=int, default=64)
    parser.add_argument("--classes", type=int, default=30)
    parser.add_argument("--ensemble-size", type=int, default=3)
    parser.add_argument("--workers", type=int, nargs="+", default=[1, 8])
    parser.add_argument("--seed", type=int, default=800)
    args = parser.parse_args()

    noises = np.linspace(0.02, 0.95, args.sources)
    specs = tuple(
        SyntheticSourceSpec(
            source_id=f"s{i:02d}",
            noise=float(noises[i]),
            num_source_classes=min(8 + (i % 16), args.classes),
            label_map=rotated_group_map(args.classes, min(8 + (i % 16), args.classes), i),
            seed=i,
        )
        for i in range(args.sources)
    )
    weights = 1.0 / np.arange(1, args.classes + 1)
    prior = tuple(float(w) for w in weights / weights.sum())

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        print(f"generating bundle: {args.sources} sources, n={args.n}, "
              f"{args.classes} classes ...")
        sample_set = gen_target(args.classes, args.n, prior, [args.seed, 0])
        preds = [gen_source(s, sample_set) for s in specs]
        write_bundle(sample_set, preds, make_metas(specs, args.n), tmp / "bundle")
        del preds

        outputs = []
        for workers in args.workers:
            out = tmp / f"w{workers}"
            started = time.monotonic()
            code = cli_main([
                "score", "--bundle", str(tmp / "bundle"), "--out", str(out),
                "--ensemble-size", str(args.ensemble_size),
                "--workers", str(workers),
            ])
            if code != 0:
                return code
            elapsed = time.monotonic() - started
            print(f"workers={workers}: {elapsed:.1f}s")
            outputs.append((out / "score.csv").read_bytes())
        if len(set(outputs)) != 1:
            print("ERROR: outputs differ across worker counts", file=sys.stderr)
            return 3
        print("outputs byte-identical across worker counts")
    return 0


if __name__ == "__main__":
    sys.exit(main())
