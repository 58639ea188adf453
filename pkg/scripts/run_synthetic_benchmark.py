#!/usr/bin/env python3
"""Run the default synthetic benchmark end to end and write all outputs.

Generates the 12-source benchmark config, runs every seed through
scoring, held-out oracle evaluation, and correlation, then leaves a
fully inspectable run directory (config, per-seed bundles and tables,
correlation report, scatter data).

Usage:
    python scripts/run_synthetic_benchmark.py --out runs/bench [--workers 2]
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from enseep.cli import main as cli_main
from enseep.synthetic import example_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/bench")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--n-sources", type=int, default=12)
    parser.add_argument("--n-train", type=int, default=20000)
    parser.add_argument("--n-heldout", type=int, default=20000)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--force", action="store_true")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = example_config(
        n_sources=args.n_sources,
        n_train=args.n_train,
        n_heldout=args.n_heldout,
        seeds=tuple(args.seeds),
    )
    config_path = out / "config.json"
    if config_path.exists() and not args.force:
        print(f"{config_path} exists; pass --force", file=sys.stderr)
        return 1
    config.to_json(config_path)

    started = time.monotonic()
    argv = ["bench", "--config", str(config_path), "--out", str(out),
            "--workers", str(args.workers)]
    if args.force:
        argv.append("--force")
    code = cli_main(argv)
    print(f"total {time.monotonic() - started:.1f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
