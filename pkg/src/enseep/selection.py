"""Ensemble enumeration, batch scoring, ranking, and source pre-selection.

Candidate ensembles are every size-S subset of the source pool, in
lexicographic member order. The batch engine streams samples through a
fused kernel in fixed 1024-sample chunks: ensembles sharing their first
S-1 members reuse one prefix sum, and each ensemble owns its float64
accumulators, so scores are bit-identical for any worker count or
memory budget. Per-ensemble arithmetic follows the same operation order
as the single-ensemble functions in :mod:`enseep.metrics`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterator, Sequence

import numba
import numpy as np
from numba import njit, prange

from .datamodel import SampleSet, SourceMeta, SourcePredictions
from .eep import PROB_FLOOR, empirical_joint, leep_from_gt_probs
from .errors import ValidationError
from .metrics import Ensemble, iou_from_tallies
from . import textio

METRIC_COLUMNS = ("ms_leep", "e_leep", "iou_eep", "soft_iou_eep", "base")
ENSEMBLE_METRICS = ("ms_leep", "e_leep", "iou_eep", "soft_iou_eep")

# Samples per kernel pass. Fixed (not tunable) so that the streamed
# accumulation is one canonical procedure; 1024 keeps the per-chunk
# slice of all sources cache-resident for typical pool sizes.
KERNEL_CHUNK = 1024


@dataclass(frozen=True)
class SourcePool:
    """Distinct candidate source ids, stored sorted ascending."""

    source_ids: tuple[str, ...]
    excluded_dataset: str | None = None

    def __post_init__(self):
        ids = tuple(sorted(self.source_ids))
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate source ids in pool")
        if not ids:
            raise ValidationError("empty source pool")
        object.__setattr__(self, "source_ids", ids)

    @classmethod
    def from_metas(
        cls, metas: Sequence[SourceMeta], exclude_dataset: str | None = None
    ) -> "SourcePool":
        """Pool of all sources, minus those trained on the target dataset."""
        ids = [
            m.source_id
            for m in metas
            if exclude_dataset is None or m.dataset_name != exclude_dataset
        ]
        if not ids:
            raise ValidationError(
                f"no sources left after excluding dataset {exclude_dataset!r}"
            )
        return cls(source_ids=tuple(ids), excluded_dataset=exclude_dataset)

    @property
    def size(self) -> int:
        return len(self.source_ids)


def enumerate_ensembles(pool: SourcePool, ensemble_size: int) -> Iterator[Ensemble]:
    """All C(N, S) canonical ensembles in lexicographic order."""
    if ensemble_size < 1:
        raise ValidationError("ensemble size must be >= 1")
    if ensemble_size > pool.size:
        raise ValidationError(
            f"ensemble size {ensemble_size} exceeds pool size {pool.size}"
        )
    for members in combinations(pool.source_ids, ensemble_size):
        yield Ensemble(member_ids=members)


@dataclass
class ScoreConfig:
    """Knobs for the batch engine."""

    metrics: tuple[str, ...] = METRIC_COLUMNS
    workers: int = 1
    memory_budget_mb: int = 2048

    def __post_init__(self):
        unknown = [m for m in self.metrics if m not in METRIC_COLUMNS]
        if unknown:
            raise ValidationError(f"unknown metrics: {', '.join(unknown)}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.memory_budget_mb < 1:
            raise ValidationError("memory budget must be >= 1 MB")


@dataclass(eq=False)
class ScoreTable:
    """One row per enumerated ensemble, one column per metric."""

    ensembles: tuple[Ensemble, ...]
    scores: dict[str, np.ndarray]  # metric -> (M,) float64
    ensemble_size: int
    pool_ids: tuple[str, ...]
    source_leep: dict[str, float] = field(default_factory=dict)
    _index: dict[Ensemble, int] | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.ensembles)

    @property
    def metrics(self) -> tuple[str, ...]:
        return tuple(m for m in METRIC_COLUMNS if m in self.scores)

    def column(self, metric: str) -> np.ndarray:
        if metric not in self.scores:
            raise ValidationError(f"unknown metric {metric!r}")
        return self.scores[metric]

    def value(self, ensemble: Ensemble, metric: str) -> float:
        if self._index is None:
            self._index = {e: i for i, e in enumerate(self.ensembles)}
        if ensemble not in self._index:
            raise ValidationError(f"ensemble {ensemble.key!r} not in table")
        return float(self.column(metric)[self._index[ensemble]])

    def to_csv(self, path: str | Path) -> None:
        metrics = self.metrics
        rows = [
            [e.key] + [textio.fmt(self.scores[m][i]) for m in metrics]
            for i, e in enumerate(self.ensembles)
        ]
        textio.write_csv(path, ["ensemble", *metrics], rows)

    def to_json(self, path: str | Path) -> None:
        textio.write_json(
            path,
            {
                "schema_version": 1,
                "kind": "score_table",
                "ensemble_size": self.ensemble_size,
                "pool": list(self.pool_ids),
                "ensembles": [e.key for e in self.ensembles],
                "scores": {m: list(map(float, v)) for m, v in self.scores.items()},
                "source_leep": {k: float(v) for k, v in self.source_leep.items()},
                "metric_config": {
                    "log_probability_floor": PROB_FLOOR,
                    "argmax_tie_break": "lowest_index",
                    "iou_zero_union_classes": "excluded",
                    "kernel_chunk_samples": KERNEL_CHUNK,
                },
            },
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ScoreTable":
        doc = textio.read_json(path)
        ensembles = tuple(Ensemble.from_key(k) for k in doc["ensembles"])
        scores = {
            m: np.asarray(v, dtype=np.float64) for m, v in doc["scores"].items()
        }
        return cls(
            ensembles=ensembles,
            scores=scores,
            ensemble_size=int(doc["ensemble_size"]),
            pool_ids=tuple(doc["pool"]),
            source_leep={k: float(v) for k, v in doc.get("source_leep", {}).items()},
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreTable":
        header, rows = textio.read_csv(path)
        if not header or header[0] != "ensemble":
            raise ValidationError(f"{path}: first column must be 'ensemble'")
        metrics = header[1:]
        unknown = [m for m in metrics if m not in METRIC_COLUMNS]
        if unknown:
            raise ValidationError(f"{path}: unknown metrics {', '.join(unknown)}")
        ensembles = tuple(Ensemble.from_key(row[0]) for row in rows)
        scores = {
            m: np.array([float(row[j + 1]) for row in rows], dtype=np.float64)
            for j, m in enumerate(metrics)
        }
        sizes = {e.size for e in ensembles}
        if len(sizes) > 1:
            raise ValidationError(f"{path}: mixed ensemble sizes")
        pool = tuple(sorted({m for e in ensembles for m in e.member_ids}))
        return cls(
            ensembles=ensembles,
            scores=scores,
            ensemble_size=sizes.pop() if sizes else 0,
            pool_ids=pool,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ScoreTable":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_json(path)
        return cls.from_csv(path)


@dataclass(eq=False)
class RankedList:
    """Ensembles ordered by descending score; ties lexicographic."""

    metric: str
    entries: tuple[tuple[Ensemble, float], ...]

    def to_csv(self, path: str | Path) -> None:
        rows = [
            [str(rank + 1), e.key, textio.fmt(score)]
            for rank, (e, score) in enumerate(self.entries)
        ]
        textio.write_csv(path, ["rank", "ensemble", self.metric], rows)

    def to_json(self, path: str | Path) -> None:
        textio.write_json(
            path,
            {
                "schema_version": 1,
                "kind": "ranked_list",
                "metric": self.metric,
                "entries": [[e.key, float(s)] for e, s in self.entries],
            },
        )


# ---------------------------------------------------------------------------
# batch engine


@njit(cache=True)
def _eep_chunk_kernel(probs, conditional, out, gt, gt_out):
    # out[i, y] = float32( sum_z conditional[y, z] * probs[i, z] ), float64
    # accumulation with z ascending; gt_out[i] = out[i, gt[i]].
    m, z_dim = probs.shape
    y_dim = conditional.shape[0]
    for i in range(m):
        for y in range(y_dim):
            acc = 0.0
            for z in range(z_dim):
                acc += conditional[y, z] * np.float64(probs[i, z])
            out[i, y] = np.float32(acc)
        gt_out[i] = out[i, gt[i]]


@njit(parallel=True, cache=True)
def _score_chunk_kernel(
    eep_chunk,  # (N, m, Y) float32
    gt_chunk,  # (m,) int32
    prefix_members,  # (G, S-1) int32
    prefix_last,  # (G,) int32; -1 for the empty prefix (S == 1)
    prefix_off,  # (G,) int64 first ensemble row of the group
    n_sources,  # int
    size,  # int S
    sumlog,  # (M,) float64, in/out
    tp,  # (M, Y) int64, in/out
    predc,  # (M, Y) int64, in/out
    stp,  # (M, Y) float64, in/out
    sfp,  # (M, Y) float64, in/out
    sfn,  # (M, Y) float64, in/out
):
    # Each ensemble's accumulators are touched by exactly one prefix
    # group, and every reduction adds samples in ascending order, so the
    # result is independent of thread count and chunk boundaries do not
    # change the final operation sequence per accumulator cell.
    n_groups = prefix_members.shape[0]
    m = gt_chunk.shape[0]
    y_dim = eep_chunk.shape[2]
    divisor = np.float64(size)
    for g in prange(n_groups):
        prefsum = np.zeros((m, y_dim), dtype=np.float64)
        for s in range(size - 1):
            src = prefix_members[g, s]
            for i in range(m):
                for y in range(y_dim):
                    prefsum[i, y] += np.float64(eep_chunk[src, i, y])
        base_row = prefix_off[g]
        for c in range(prefix_last[g] + 1, n_sources):
            e = base_row + (c - prefix_last[g] - 1)
            for i in range(m):
                vmax = -1.0
                best = 0
                for y in range(y_dim):
                    v = prefsum[i, y] + np.float64(eep_chunk[c, i, y])
                    if v > vmax:
                        vmax = v
                        best = y
                yt = gt_chunk[i]
                pg = (prefsum[i, yt] + np.float64(eep_chunk[c, i, yt])) / divisor
                plog = pg
                if plog < PROB_FLOOR:
                    plog = PROB_FLOOR
                elif plog > 1.0:
                    plog = 1.0
                sumlog[e] += np.log(plog)
                predc[e, best] += 1
                if best == yt:
                    w = pg
                    if w > 1.0:
                        w = 1.0
                    elif w < 0.0:
                        w = 0.0
                    tp[e, yt] += 1
                    stp[e, yt] += w
                else:
                    w = 1.0 - pg
                    if w > 1.0:
                        w = 1.0
                    elif w < 0.0:
                        w = 0.0
                    sfp[e, best] += w
                    sfn[e, yt] += w


def _prefix_groups(n_sources: int, size: int):
    """Ensembles grouped by their first S-1 members, lexicographic order."""
    if size == 1:
        prefix_members = np.zeros((1, 0), dtype=np.int32)
        prefix_last = np.array([-1], dtype=np.int32)
        prefix_off = np.array([0], dtype=np.int64)
        return prefix_members, prefix_last, prefix_off
    prefixes = [
        p for p in combinations(range(n_sources), size - 1) if p[-1] < n_sources - 1
    ]
    prefix_members = np.array(prefixes, dtype=np.int32).reshape(len(prefixes), size - 1)
    prefix_last = prefix_members[:, -1].astype(np.int32)
    counts = (n_sources - 1 - prefix_last).astype(np.int64)
    prefix_off = np.zeros(len(prefixes), dtype=np.int64)
    prefix_off[1:] = np.cumsum(counts)[:-1]
    return prefix_members, prefix_last, prefix_off


def _estimate_engine_bytes(
    n_sources: int, n_ensembles: int, n: int, y_dim: int, max_z: int
) -> int:
    chunk_buffers = n_sources * KERNEL_CHUNK * y_dim * 4
    gt_probs = n_sources * n * 4
    accumulators = n_ensembles * (8 + y_dim * (8 * 3 + 8 * 2))
    conditionals = n_sources * y_dim * max_z * 8
    return chunk_buffers + gt_probs + accumulators + conditionals


def score_all(
    sample_set: SampleSet,
    predictions: Sequence[SourcePredictions],
    metas: Sequence[SourceMeta],
    pool: SourcePool,
    ensemble_size: int,
    config: ScoreConfig | None = None,
) -> ScoreTable:
    """Score every size-S ensemble of the pool on all configured metrics.

    Deterministic: the resulting table is bit-identical for any worker
    count. Sources are processed in ascending id order, samples in
    ascending order, in float64 accumulators.
    """
    config = config or ScoreConfig()
    preds_by_id = {p.source_id: p for p in predictions}
    metas_by_id = {m.source_id: m for m in metas}
    for sid in pool.source_ids:
        if sid not in preds_by_id:
            raise ValidationError(f"pool source {sid!r} has no predictions")
        if "base" in config.metrics and sid not in metas_by_id:
            raise ValidationError(f"pool source {sid!r} has no metadata")
        if preds_by_id[sid].n != sample_set.n:
            raise ValidationError(
                f"{sid}: {preds_by_id[sid].n} prediction rows, "
                f"sample set has {sample_set.n}"
            )

    ensembles = tuple(enumerate_ensembles(pool, ensemble_size))
    n_sources = pool.size
    n_ens = len(ensembles)
    n = sample_set.n
    y_dim = sample_set.target_space.cardinality
    gt = sample_set.ground_truth

    max_z = max(preds_by_id[sid].space.cardinality for sid in pool.source_ids)
    est = _estimate_engine_bytes(n_sources, n_ens, n, y_dim, max_z)
    budget = config.memory_budget_mb * (1 << 20)
    if est > budget:
        raise ValidationError(
            f"problem needs ~{est / (1 << 20):.0f} MiB of engine memory, "
            f"budget is {config.memory_budget_mb} MiB"
        )

    # Per-source translation models, fitted in ascending id order.
    conditionals = [
        np.ascontiguousarray(
            empirical_joint(preds_by_id[sid], sample_set).conditional
        )
        for sid in pool.source_ids
    ]

    needs_kernel = bool(set(config.metrics) & {"e_leep", "iou_eep", "soft_iou_eep"})
    sumlog = np.zeros(n_ens, dtype=np.float64)
    tp = np.zeros((n_ens, y_dim), dtype=np.int64)
    predc = np.zeros((n_ens, y_dim), dtype=np.int64)
    stp = np.zeros((n_ens, y_dim), dtype=np.float64)
    sfp = np.zeros((n_ens, y_dim), dtype=np.float64)
    sfn = np.zeros((n_ens, y_dim), dtype=np.float64)
    gt_probs = np.empty((n_sources, n), dtype=np.float32)

    prefix_members, prefix_last, prefix_off = _prefix_groups(n_sources, ensemble_size)
    numba.set_num_threads(min(config.workers, numba.config.NUMBA_NUM_THREADS))
    eep_chunk = np.empty((n_sources, KERNEL_CHUNK, y_dim), dtype=np.float32)
    for lo in range(0, n, KERNEL_CHUNK):
        hi = min(lo + KERNEL_CHUNK, n)
        m = hi - lo
        for j, sid in enumerate(pool.source_ids):
            _eep_chunk_kernel(
                preds_by_id[sid].probs[lo:hi],
                conditionals[j],
                eep_chunk[j, :m],
                gt[lo:hi],
                gt_probs[j, lo:hi],
            )
        if needs_kernel:
            _score_chunk_kernel(
                eep_chunk[:, :m],
                gt[lo:hi],
                prefix_members,
                prefix_last,
                prefix_off,
                n_sources,
                ensemble_size,
                sumlog,
                tp,
                predc,
                stp,
                sfp,
                sfn,
            )
    source_leep = {
        sid: leep_from_gt_probs(gt_probs[j])
        for j, sid in enumerate(pool.source_ids)
    }

    gt_count = np.bincount(gt, minlength=y_dim).astype(np.int64)
    index_of = {sid: j for j, sid in enumerate(pool.source_ids)}
    scores: dict[str, np.ndarray] = {}
    if "ms_leep" in config.metrics:
        col = np.zeros(n_ens, dtype=np.float64)
        leeps = np.array([source_leep[s] for s in pool.source_ids])
        member_idx = np.array(
            [[index_of[m] for m in e.member_ids] for e in ensembles],
            dtype=np.int64,
        )
        for s in range(ensemble_size):
            col += leeps[member_idx[:, s]]
        scores["ms_leep"] = col
    if "e_leep" in config.metrics:
        scores["e_leep"] = sumlog / n
    if "iou_eep" in config.metrics:
        col = np.empty(n_ens, dtype=np.float64)
        tpf = tp.astype(np.float64)
        for i in range(n_ens):
            col[i] = iou_from_tallies(
                tpf[i], predc[i].astype(np.float64) - tpf[i], gt_count - tpf[i]
            )
        scores["iou_eep"] = col
    if "soft_iou_eep" in config.metrics:
        col = np.empty(n_ens, dtype=np.float64)
        for i in range(n_ens):
            col[i] = iou_from_tallies(stp[i], sfp[i], sfn[i])
        scores["soft_iou_eep"] = col
    if "base" in config.metrics:
        per_source = {
            sid: metas_by_id[sid].source_performance
            * metas_by_id[sid].source_size
            * metas_by_id[sid].source_classes
            for sid in pool.source_ids
        }
        col = np.zeros(n_ens, dtype=np.float64)
        for i, e in enumerate(ensembles):
            total = 0.0
            for member in e.member_ids:
                total += per_source[member]
            col[i] = total
        scores["base"] = col

    return ScoreTable(
        ensembles=ensembles,
        scores=scores,
        ensemble_size=ensemble_size,
        pool_ids=pool.source_ids,
        source_leep=source_leep,
    )


# ---------------------------------------------------------------------------
# ranking and pre-selection


def top_k(table: ScoreTable, metric: str, k: int) -> RankedList:
    """The k highest-scoring ensembles; ties broken lexicographically."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    col = table.column(metric)
    order = sorted(
        range(len(table)),
        key=lambda i: (-col[i], table.ensembles[i].member_ids),
    )[:k]
    return RankedList(
        metric=metric,
        entries=tuple((table.ensembles[i], float(col[i])) for i in order),
    )


def preselect_sources(
    table: ScoreTable,
    per_metric_top_k: int = 10,
    n_good: int = 5,
    n_random: int = 10,
    pool: SourcePool | None = None,
    seed: int = 0,
    metrics: Sequence[str] = ENSEMBLE_METRICS,
) -> list[str]:
    """Reduce the pool to the frequent top performers plus random others.

    Counts how often each source appears in every metric's top-k
    ensembles, keeps the n_good most frequent (ties broken by higher
    single-source score, then id), and adds n_random uniformly random
    distinct sources from the rest of the pool.
    """
    pool_ids = pool.source_ids if pool is not None else table.pool_ids
    if n_good < 0 or n_random < 0:
        raise ValidationError("n_good and n_random must be >= 0")
    if n_good + n_random > len(pool_ids):
        raise ValidationError(
            f"cannot select {n_good}+{n_random} sources from a pool of {len(pool_ids)}"
        )
    counts: dict[str, int] = {sid: 0 for sid in pool_ids}
    for metric in metrics:
        for ensemble, _ in top_k(table, metric, per_metric_top_k).entries:
            for member in ensemble.member_ids:
                if member in counts:
                    counts[member] += 1
    ranked = sorted(
        pool_ids,
        key=lambda sid: (
            -counts[sid],
            -table.source_leep.get(sid, -math.inf),
            sid,
        ),
    )
    good = ranked[:n_good]
    remaining = sorted(set(pool_ids) - set(good))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    randoms = (
        [remaining[i] for i in rng.choice(len(remaining), size=n_random, replace=False)]
        if n_random
        else []
    )
    return good + randoms
