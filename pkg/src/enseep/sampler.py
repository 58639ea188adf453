"""Class-balanced pixel sampling from dense label rasters.

Dense per-pixel ground truth is reduced to a list of (image_id,
pixel_index) samples: a fixed budget of pixels per image, drawn without
replacement with per-pixel inclusion probability proportional to the
inverse of the global frequency of the pixel's class (systematic
probability-proportional-to-size sampling). With that scheme the
expected number of sampled pixels per class is equal across the classes
present, regardless of imbalance. Ignored pixels are excluded before
the draw and never consume budget.

Raster files are raw binary: magic ``EEPR0001``, then width, height
(uint32 LE), the ignore value (int32 LE), then width*height int32 LE
labels in row-major order. Sample-index lists are JSON documents.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BundleIOError, ValidationError

RASTER_MAGIC = b"EEPR0001"
DEFAULT_PIXELS_PER_IMAGE = 1000
INDEX_SCHEMA_VERSION = 1


@dataclass(eq=False)
class LabelRaster:
    """Dense per-pixel labels for one image."""

    image_id: str
    width: int
    height: int
    labels: np.ndarray  # (width*height,) int32 row-major
    ignore_value: int = -1

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int32).ravel()
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"{self.image_id}: empty raster")
        if labels.shape[0] != self.width * self.height:
            raise ValidationError(
                f"{self.image_id}: {labels.shape[0]} labels for "
                f"{self.width}x{self.height} raster"
            )
        valid = labels != self.ignore_value
        if valid.any() and labels[valid].min() < 0:
            raise ValidationError(f"{self.image_id}: negative non-ignore label")
        self.labels = labels


@dataclass(eq=False)
class SampleIndexList:
    """Sampled (image_id, pixel_index) pairs plus the seed that drew them."""

    entries: tuple[tuple[str, int], ...]
    seed: int
    k_per_image: int = DEFAULT_PIXELS_PER_IMAGE

    def __post_init__(self):
        self.entries = tuple((str(a), int(b)) for a, b in self.entries)


def write_raster(raster: LabelRaster, path: str | Path) -> None:
    header = np.array([raster.width, raster.height], dtype="<u4").tobytes()
    ignore = np.array([raster.ignore_value], dtype="<i4").tobytes()
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(header)
        fh.write(ignore)
        fh.write(raster.labels.astype("<i4", copy=False).tobytes())


def read_raster(path: str | Path, image_id: str | None = None) -> LabelRaster:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise BundleIOError(f"cannot read raster {path}: {exc}") from exc
    if blob[:8] != RASTER_MAGIC:
        raise ValidationError(f"raster file {path} has wrong magic")
    if len(blob) < 20:
        raise ValidationError(f"raster file {path} truncated")
    width, height = np.frombuffer(blob, dtype="<u4", count=2, offset=8)
    ignore_value = int(np.frombuffer(blob, dtype="<i4", count=1, offset=16)[0])
    expected = 20 + int(width) * int(height) * 4
    if len(blob) != expected:
        raise ValidationError(
            f"raster file {path} holds {len(blob)} bytes, header implies {expected}"
        )
    labels = np.frombuffer(blob, dtype="<i4", offset=20).astype(np.int32)
    return LabelRaster(
        image_id=image_id if image_id is not None else path.stem,
        width=int(width),
        height=int(height),
        labels=labels,
        ignore_value=ignore_value,
    )


def _check_rasters(rasters: Sequence[LabelRaster]) -> None:
    if not rasters:
        raise ValidationError("no rasters given")
    ids = [r.image_id for r in rasters]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate image ids in raster list")


def class_frequencies(
    rasters: Sequence[LabelRaster], num_classes: int | None = None
) -> np.ndarray:
    """Count non-ignore pixels per class over the whole target dataset."""
    _check_rasters(rasters)
    max_label = -1
    for r in rasters:
        valid = r.labels[r.labels != r.ignore_value]
        if valid.size:
            max_label = max(max_label, int(valid.max()))
    if max_label < 0:
        raise ValidationError("all pixels are ignored; no class frequencies")
    if num_classes is None:
        num_classes = max_label + 1
    elif max_label >= num_classes:
        raise ValidationError(
            f"label {max_label} outside the declared {num_classes} classes"
        )
    counts = np.zeros(num_classes, dtype=np.int64)
    for r in rasters:
        valid = r.labels[r.labels != r.ignore_value]
        counts += np.bincount(valid, minlength=num_classes)
    return counts


def _inclusion_probabilities(weights: np.ndarray, k: int) -> np.ndarray:
    """Per-pixel inclusion probabilities proportional to weight, capped at 1.

    Capped pixels are always included and the rest of the budget is
    redistributed over the remaining ones; the result sums to k.
    """
    m = weights.shape[0]
    pi = np.zeros(m, dtype=np.float64)
    active = np.ones(m, dtype=bool)
    remaining = k
    while remaining > 0 and active.any():
        candidate = remaining * weights[active] / weights[active].sum()
        over = candidate >= 1.0
        if not over.any():
            pi[active] = candidate
            break
        capped = np.nonzero(active)[0][over]
        pi[capped] = 1.0
        active[capped] = False
        remaining -= capped.shape[0]
    return pi


def sample_pixels(
    rasters: Sequence[LabelRaster],
    k_per_image: int,
    frequencies: np.ndarray,
    seed: int,
) -> SampleIndexList:
    """Draw up to k pixels per image, weighted by inverse class frequency.

    Systematic sampling without replacement: pixel p gets inclusion
    probability proportional to 1/frequency[label_p] (capped at 1 with
    the excess redistributed), the candidates are randomly permuted, and
    one pixel is taken per unit step of the cumulative probability walk.
    Each image draws from its own generator (PCG64 seeded from
    (seed, image position)), so the result does not depend on worker
    count; entries are ordered by input raster order, then ascending
    pixel index.
    """
    _check_rasters(rasters)
    if k_per_image < 1:
        raise ValidationError("k_per_image must be >= 1")
    frequencies = np.asarray(frequencies, dtype=np.float64)
    entries: list[tuple[str, int]] = []
    for pos, raster in enumerate(rasters):
        candidates = np.nonzero(raster.labels != raster.ignore_value)[0]
        if candidates.size == 0:
            continue
        labels = raster.labels[candidates]
        if int(labels.max()) >= frequencies.shape[0]:
            raise ValidationError(
                f"{raster.image_id}: label {int(labels.max())} has no frequency entry"
            )
        freq = frequencies[labels]
        if (freq <= 0).any():
            raise ValidationError(
                f"{raster.image_id}: zero frequency for a class present in the raster"
            )
        k = min(k_per_image, candidates.size)
        if k == candidates.size:
            picked = candidates
        else:
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([seed, pos]))
            )
            pi = _inclusion_probabilities(1.0 / freq, k)
            perm = rng.permutation(candidates.size)
            ladder = np.cumsum(pi[perm])
            targets = rng.random() + np.arange(k)
            chosen = np.searchsorted(ladder, targets, side="right")
            picked = candidates[perm[np.minimum(chosen, candidates.size - 1)]]
        picked = np.sort(picked)
        entries.extend((raster.image_id, int(p)) for p in picked)
    if not entries:
        raise ValidationError("all rasters fully ignored; nothing to sample")
    return SampleIndexList(entries=tuple(entries), seed=seed, k_per_image=k_per_image)


def gather_labels(
    rasters: Sequence[LabelRaster], index_list: SampleIndexList
) -> np.ndarray:
    """Resolve sampled entries back to their int32 labels, in entry order."""
    by_id = {r.image_id: r for r in rasters}
    out = np.empty(len(index_list.entries), dtype=np.int32)
    for row, (image_id, pixel) in enumerate(index_list.entries):
        raster = by_id.get(image_id)
        if raster is None:
            raise ValidationError(f"entry {row}: unknown image id {image_id!r}")
        if not 0 <= pixel < raster.labels.shape[0]:
            raise ValidationError(f"entry {row}: pixel {pixel} outside {image_id!r}")
        label = int(raster.labels[pixel])
        if label == raster.ignore_value:
            raise ValidationError(f"entry {row}: pixel {pixel} is ignored in {image_id!r}")
        out[row] = label
    return out


def write_index_list(index_list: SampleIndexList, path: str | Path) -> None:
    doc = {
        "schema_version": INDEX_SCHEMA_VERSION,
        "seed": index_list.seed,
        "k_per_image": index_list.k_per_image,
        "entries": [[a, b] for a, b in index_list.entries],
    }
    Path(path).write_text(json.dumps(doc, indent=0) + "\n", encoding="utf-8")


def read_index_list(path: str | Path) -> SampleIndexList:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise BundleIOError(f"cannot read index list {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"index list {path} is not valid JSON: {exc}") from exc
    try:
        return SampleIndexList(
            entries=tuple((a, b) for a, b in doc["entries"]),
            seed=int(doc["seed"]),
            k_per_image=int(doc.get("k_per_image", DEFAULT_PIXELS_PER_IMAGE)),
        )
    except KeyError as exc:
        raise ValidationError(f"index list {path} lacks key {exc}") from exc
