"""Rank and linear correlation between predicted and actual performance.

Three measures per metric column, reported side by side:

    weighted_tau  pairwise rank agreement where pairs involving
                  top-performing items count more. Items are ranked by
                  actual performance descending (0-based rank r); a pair
                  (i, j) weighs 1/(r_i+1) + 1/(r_j+1); the statistic is
                  the weight-normalized sum of sign agreements. Tied
                  pairs contribute zero agreement but keep their weight
                  in the denominator.
    tau           tie-corrected pairwise rank agreement (tau-b).
    pearson       sample linear correlation.

All arithmetic in float64. Constant inputs are degenerate: an error
from the individual measures, a flagged NaN row in the report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .metrics import Ensemble
from .selection import ScoreTable
from . import textio

_PAIR_BLOCK = 512


def _pair_block(n: int) -> int:
    # cap pairwise intermediates at ~4M elements per block
    return max(1, min(_PAIR_BLOCK, (4 << 20) // max(1, n)))


def _check_pair(xs, ys) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape[0] != ys.shape[0]:
        raise ValidationError("vectors have different lengths")
    if xs.shape[0] < 2:
        raise ValidationError("need at least 2 points")
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise ValidationError("non-finite value in correlation input")
    return xs, ys


def pearson(xs, ys) -> float:
    """Sample linear correlation coefficient."""
    xs, ys = _check_pair(xs, ys)
    if (xs == xs[0]).all() or (ys == ys[0]).all():
        raise DegenerateInputError("zero variance in correlation input")
    return float(np.corrcoef(xs, ys)[0, 1])


def kendall_tau(xs, ys) -> float:
    """Tie-corrected pairwise rank correlation (tau-b).

    Computed from exact integer pair tallies:
    (concordant - discordant) / sqrt((n0 - ties_x) * (n0 - ties_y)).
    """
    xs, ys = _check_pair(xs, ys)
    if (xs == xs[0]).all() or (ys == ys[0]).all():
        raise DegenerateInputError("all values tied in one vector")
    n = xs.shape[0]
    cols = np.arange(n)
    concordant = discordant = ties_x = ties_y = 0
    block = _pair_block(n)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        upper = cols[None, :] > np.arange(lo, hi)[:, None]
        dx = xs[lo:hi, None] - xs[None, :]
        dy = ys[lo:hi, None] - ys[None, :]
        tied_x = dx == 0
        tied_y = dy == 0
        ties_x += int((tied_x & upper).sum())
        ties_y += int((tied_y & upper).sum())
        untied = upper & ~tied_x & ~tied_y
        same_sign = (dx > 0) == (dy > 0)
        concordant += int((untied & same_sign).sum())
        discordant += int((untied & ~same_sign).sum())
    n0 = n * (n - 1) // 2
    return (concordant - discordant) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


def rank_by_descending(values: np.ndarray) -> np.ndarray:
    """0-based ranks, largest value first; exact ties keep input order."""
    order = np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
    ranks = np.empty(order.shape[0], dtype=np.int64)
    ranks[order] = np.arange(order.shape[0])
    return ranks


def weighted_kendall_tau(predicted, actual) -> float:
    """Top-weighted pairwise rank agreement of predicted versus actual.

    Pair weights are hyperbolic in the rank by actual performance:
    w_ij = 1/(r_i+1) + 1/(r_j+1). Sign agreements are summed with these
    weights and normalized by the total weight over all pairs; ties in
    either vector contribute 0 to the numerator and full weight to the
    denominator.
    """
    predicted, actual = _check_pair(predicted, actual)
    if (predicted == predicted[0]).all() or (actual == actual[0]).all():
        raise DegenerateInputError("all values tied in one vector")
    n = predicted.shape[0]
    inv_rank = 1.0 / (rank_by_descending(actual) + 1.0)
    cols = np.arange(n)
    num = 0.0
    den = 0.0
    block = _pair_block(n)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        rows = np.arange(lo, hi)
        upper = cols[None, :] > rows[:, None]
        w = (inv_rank[lo:hi, None] + inv_rank[None, :]) * upper
        dp = np.sign(predicted[lo:hi, None] - predicted[None, :])
        da = np.sign(actual[lo:hi, None] - actual[None, :])
        num += float((w * dp * da).sum())
        den += float(w.sum())
    return num / den


@dataclass(eq=False)
class PerformanceTable:
    """Actual mean IoU per candidate, keyed by canonical ensemble."""

    values: dict[Ensemble, float]
    target: str = "target"

    def __post_init__(self):
        for ensemble, value in self.values.items():
            if not 0.0 <= value <= 1.0:
                raise ValidationError(
                    f"{ensemble.key}: performance {value!r} outside [0, 1]"
                )

    def to_csv(self, path: str | Path) -> None:
        rows = [
            [e.key, textio.fmt(v)]
            for e, v in sorted(self.values.items(), key=lambda kv: kv[0].member_ids)
        ]
        textio.write_csv(path, ["ensemble", "actual_mean_iou"], rows)

    @classmethod
    def from_csv(cls, path: str | Path, target: str = "target") -> "PerformanceTable":
        header, rows = textio.read_csv(path)
        if header[:2] != ["ensemble", "actual_mean_iou"]:
            raise ValidationError(
                f"{path}: expected header ensemble,actual_mean_iou"
            )
        values = {Ensemble.from_key(row[0]): float(row[1]) for row in rows}
        if len(values) != len(rows):
            raise ValidationError(f"{path}: duplicate ensemble keys")
        return cls(values=values, target=target)


@dataclass(eq=False)
class CorrelationRow:
    target: str
    metric: str
    weighted_tau: float
    tau: float
    pearson: float
    n_pairs: int
    degenerate: bool = False


@dataclass(eq=False)
class CorrelationReport:
    rows: list[CorrelationRow] = field(default_factory=list)

    def row(self, target: str, metric: str) -> CorrelationRow:
        for r in self.rows:
            if r.target == target and r.metric == metric:
                return r
        raise ValidationError(f"no row for ({target}, {metric})")

    def to_csv(self, path: str | Path) -> None:
        rows = [
            [
                r.target,
                r.metric,
                textio.fmt(r.weighted_tau),
                textio.fmt(r.tau),
                textio.fmt(r.pearson),
                str(r.n_pairs),
            ]
            for r in self.rows
        ]
        textio.write_csv(
            path,
            ["target", "metric", "weighted_tau", "tau", "pearson", "n_pairs"],
            rows,
        )


def correlation_report(
    score_table: ScoreTable,
    performance_table: PerformanceTable,
    metrics: Sequence[str] | None = None,
) -> CorrelationReport:
    """All three measures for each metric column against actual performance.

    Every ensemble in the score table must have an actual-performance
    entry; missing keys are an error. Degenerate metric columns (or a
    constant performance vector) produce NaN rows flagged as degenerate.
    """
    missing = [
        e.key for e in score_table.ensembles if e not in performance_table.values
    ]
    if missing:
        shown = ", ".join(missing[:5])
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise ValidationError(f"no actual performance for: {shown}{more}")
    actual = np.array(
        [performance_table.values[e] for e in score_table.ensembles], dtype=np.float64
    )
    report = CorrelationReport()
    for metric in metrics or score_table.metrics:
        predicted = score_table.column(metric)
        try:
            row = CorrelationRow(
                target=performance_table.target,
                metric=metric,
                weighted_tau=weighted_kendall_tau(predicted, actual),
                tau=kendall_tau(predicted, actual),
                pearson=pearson(predicted, actual),
                n_pairs=len(score_table),
            )
        except DegenerateInputError:
            row = CorrelationRow(
                target=performance_table.target,
                metric=metric,
                weighted_tau=float("nan"),
                tau=float("nan"),
                pearson=float("nan"),
                n_pairs=len(score_table),
                degenerate=True,
            )
        report.rows.append(row)
    return report


def write_scatter(
    score_table: ScoreTable,
    performance_table: PerformanceTable,
    metric: str,
    path: str | Path,
) -> None:
    """Plot-ready CSV: one (predicted, actual) dot per candidate ensemble."""
    col = score_table.column(metric)
    rows = []
    for i, e in enumerate(score_table.ensembles):
        if e not in performance_table.values:
            raise ValidationError(f"no actual performance for {e.key!r}")
        rows.append(
            [e.key, textio.fmt(col[i]), textio.fmt(performance_table.values[e])]
        )
    textio.write_csv(path, ["ensemble", "predicted", "actual"], rows)
