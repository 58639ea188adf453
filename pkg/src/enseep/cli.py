"""Command-line front end.

Subcommands: validate, sample, score, rank, preselect, correlate,
bench. Every command validates its inputs, writes deterministic bytes
(identical inputs and seeds give identical files), and refuses to
overwrite existing outputs unless --force is given.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .correlation import (
    CorrelationReport,
    PerformanceTable,
    correlation_report,
    write_scatter,
)
from .datamodel import load_bundle, write_bundle
from .errors import BundleIOError, InvariantViolation, ValidationError
from .sampler import (
    DEFAULT_PIXELS_PER_IMAGE,
    class_frequencies,
    read_raster,
    sample_pixels,
    write_index_list,
)
from .selection import (
    METRIC_COLUMNS,
    ScoreConfig,
    ScoreTable,
    SourcePool,
    preselect_sources,
    score_all,
    top_k,
)
from .synthetic import BenchConfig, run_benchmark

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; keep that for usage
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _ensure_output(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ValidationError(f"{path} exists; pass --force to overwrite")


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_scores(path: str) -> ScoreTable:
    return ScoreTable.load(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    sample_set, predictions, metas = load_bundle(args.bundle)
    print(f"bundle {args.bundle}: OK")
    print(f"  samples: {sample_set.n}")
    print(
        f"  target space: {sample_set.target_space.id} "
        f"({sample_set.target_space.cardinality} classes)"
    )
    print(f"  sources: {len(predictions)}")
    for p in predictions:
        print(f"    {p.source_id}: {p.space.cardinality} source classes")
    return EXIT_OK


def cmd_sample(args) -> int:
    raster_dir = Path(args.rasters)
    files = sorted(raster_dir.glob("*.bin"))
    if not files:
        raise ValidationError(f"no .bin raster files under {raster_dir}")
    rasters = [read_raster(f) for f in files]
    freqs = class_frequencies(rasters)
    index_list = sample_pixels(rasters, args.k, freqs, args.seed)
    out = Path(args.out)
    _ensure_output(out, args.force)
    write_index_list(index_list, out)
    print(
        f"sampled {len(index_list.entries)} pixels from {len(rasters)} rasters "
        f"(k={args.k}, seed={args.seed}) -> {out}"
    )
    return EXIT_OK


def cmd_score(args) -> int:
    sample_set, predictions, metas = load_bundle(args.bundle)
    pool = SourcePool.from_metas(metas, exclude_dataset=args.exclude_dataset)
    metrics = tuple(args.metrics.split(",")) if args.metrics else METRIC_COLUMNS
    config = ScoreConfig(
        metrics=metrics,
        workers=args.workers,
        memory_budget_mb=args.memory_budget_mb,
    )
    out = _out_dir(args.out)
    csv_path = out / "score.csv"
    json_path = out / "score.json"
    _ensure_output(csv_path, args.force)
    _ensure_output(json_path, args.force)
    table = score_all(
        sample_set, predictions, metas, pool, args.ensemble_size, config
    )
    table.to_csv(csv_path)
    table.to_json(json_path)
    print(
        f"scored {len(table)} ensembles (S={args.ensemble_size}) over "
        f"{pool.size} sources -> {csv_path}"
    )
    return EXIT_OK


def cmd_rank(args) -> int:
    table = _load_scores(args.scores)
    k = args.top_k if args.top_k is not None else len(table)
    ranked = top_k(table, args.metric, min(k, len(table)))
    out = _out_dir(args.out)
    csv_path = out / f"ranked_{args.metric}.csv"
    json_path = out / f"ranked_{args.metric}.json"
    _ensure_output(csv_path, args.force)
    _ensure_output(json_path, args.force)
    ranked.to_csv(csv_path)
    ranked.to_json(json_path)
    print(f"ranked {len(ranked.entries)} ensembles by {args.metric} -> {csv_path}")
    return EXIT_OK


def cmd_preselect(args) -> int:
    table = _load_scores(args.scores)
    selected = preselect_sources(
        table,
        per_metric_top_k=args.per_metric_top_k,
        n_good=args.n_good,
        n_random=args.n_random,
        seed=args.seed,
    )
    out = Path(args.out)
    _ensure_output(out, args.force)
    out.write_text("\n".join(selected) + "\n", encoding="utf-8")
    print(
        f"pre-selected {args.n_good} frequent + {args.n_random} random sources "
        f"-> {out}"
    )
    return EXIT_OK


def cmd_correlate(args) -> int:
    table = _load_scores(args.scores)
    performance = PerformanceTable.from_csv(args.performance, target=args.target)
    out = _out_dir(args.out)
    report_path = out / "correlation.csv"
    _ensure_output(report_path, args.force)
    report = correlation_report(table, performance)
    report.to_csv(report_path)
    for metric in table.metrics:
        scatter_path = out / f"scatter_{metric}.csv"
        _ensure_output(scatter_path, args.force)
        write_scatter(table, performance, metric, scatter_path)
    print(f"correlated {len(table)} ensembles on {len(table.metrics)} metrics "
          f"-> {report_path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = BenchConfig.from_json(args.config)
    out = _out_dir(args.out)
    report_path = out / "correlation.csv"
    _ensure_output(report_path, args.force)
    result = run_benchmark(config, workers=args.workers)
    combined = CorrelationReport()
    for seed_result in result.per_seed:
        seed_dir = out / f"seed_{seed_result.seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        _ensure_output(seed_dir / "score.csv", args.force)
        seed_result.score_table.to_csv(seed_dir / "score.csv")
        seed_result.score_table.to_json(seed_dir / "score.json")
        seed_result.performance.to_csv(seed_dir / "performance.csv")
        if args.write_bundles:
            write_bundle(
                seed_result.train_set,
                seed_result.train_predictions,
                seed_result.metas,
                seed_dir / "bundle",
            )
        combined.rows.extend(seed_result.report.rows)
    combined.rows.extend(result.mean_report.rows)
    combined.to_csv(report_path)
    for row in result.mean_report.rows:
        flag = " (degenerate)" if row.degenerate else ""
        print(
            f"{row.target} {row.metric}: weighted_tau={row.weighted_tau:.4f} "
            f"tau={row.tau:.4f} pearson={row.pearson:.4f}{flag}"
        )
    print(f"benchmark ({len(result.per_seed)} seeds) -> {report_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="enseep",
        description="Score, rank, and evaluate ensembles of source models "
        "by predicted transferability.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a bundle directory")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sample", help="class-balanced pixel sampling from rasters")
    p.add_argument("--rasters", required=True, help="directory of .bin label rasters")
    p.add_argument("--out", required=True, help="output index-list JSON file")
    p.add_argument("--k", type=int, default=DEFAULT_PIXELS_PER_IMAGE,
                   help="pixels per image (default %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("score", help="score all size-S ensembles of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ensemble-size", type=int, default=3)
    p.add_argument("--metrics", default=None,
                   help=f"comma-separated subset of {','.join(METRIC_COLUMNS)}")
    p.add_argument("--exclude-dataset", default=None,
                   help="drop sources trained on this dataset")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--memory-budget-mb", type=int, default=2048)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="rank ensembles of a score table")
    p.add_argument("--scores", required=True, help="score.json or score.csv")
    p.add_argument("--metric", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("preselect", help="reduce the pool to good + random sources")
    p.add_argument("--scores", required=True, help="score.json or score.csv")
    p.add_argument("--out", required=True, help="output id-list text file")
    p.add_argument("--per-metric-top-k", type=int, default=10)
    p.add_argument("--n-good", type=int, default=5)
    p.add_argument("--n-random", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_preselect)

    p = sub.add_parser("correlate", help="correlate scores with actual performance")
    p.add_argument("--scores", required=True, help="score.json or score.csv")
    p.add_argument("--performance", required=True,
                   help="CSV with columns ensemble,actual_mean_iou")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--target", default="target", help="target dataset name")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("bench", help="run the synthetic end-to-end benchmark")
    p.add_argument("--config", required=True, help="bench config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--write-bundles", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="write each seed's training bundle (on by default)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BundleIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # unexpected bug: report, exit 3
        import traceback

        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
