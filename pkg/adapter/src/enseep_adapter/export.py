"""Write scoring bundles from sampled pixels and user model outputs.

The wire contract, restated from the consumer side:

    manifest.json   n, target space, per-source metadata + file names
    gt.bin          8-byte magic ``EEPB0001`` + int32 LE labels
    pred_<id>.bin   8-byte magic ``EEPB0001`` + float32 LE row-major
                    probabilities, one row per sampled pixel

Sample-index files are JSON with ``entries`` of (image_id, pixel_index)
pairs, as emitted by ``enseep sample``; this module does no sampling of
its own. Rasters use magic ``EEPR0001`` with width/height uint32 LE,
ignore value int32 LE, then int32 LE labels.

Probability rows are checked and normalized exactly like the core
loader: rows whose float64 sum is outside 1 +/- 1e-4 abort the export,
rows drifted by more than 1e-6 are renormalized. Identical values
always serialize to identical bytes (little-endian float32).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

MATRIX_MAGIC = b"EEPB0001"
RASTER_MAGIC = b"EEPR0001"
ROW_SUM_BAND = 1e-4
ROW_SUM_CLEAN = 1e-6

# maps image_id and the image's sampled pixel indices to an
# (n_pixels, num_classes) array of probabilities
RowProvider = Callable[[str, np.ndarray], np.ndarray]


class AdapterError(ValueError):
    """Bad provider output or unresolvable sample entry."""


@dataclass(frozen=True)
class ExportSource:
    """One source model: metadata plus a probability provider."""

    source_id: str
    dataset_name: str
    architecture_tag: str
    pretraining_tag: str
    source_performance: float
    source_size: int
    source_classes: int
    space_id: str
    class_names: tuple[str, ...]
    provider: RowProvider | Mapping[str, np.ndarray]

    def rows_for(self, image_id: str, pixels: np.ndarray) -> np.ndarray:
        if callable(self.provider):
            return np.asarray(self.provider(image_id, pixels))
        per_image = self.provider.get(image_id)
        if per_image is None:
            raise AdapterError(
                f"{self.source_id}: no predictions for image {image_id!r}"
            )
        per_image = np.asarray(per_image)
        if pixels.max() >= per_image.shape[0]:
            raise AdapterError(
                f"{self.source_id}: pixel {int(pixels.max())} outside "
                f"predictions for image {image_id!r}"
            )
        return per_image[pixels]


@dataclass(frozen=True)
class ExportJob:
    """Everything needed to materialize one bundle."""

    index_file: str | Path
    raster_dir: str | Path  # ground-truth labels for the sampled pixels
    target_space_id: str
    target_class_names: tuple[str, ...]
    sources: tuple[ExportSource, ...]
    out_dir: str | Path


def read_index_list(path: str | Path) -> list[tuple[str, int]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [(str(a), int(b)) for a, b in doc["entries"]]


def read_raster(path: str | Path) -> tuple[np.ndarray, int]:
    """Return (labels, ignore_value) of one raster file."""
    blob = Path(path).read_bytes()
    if blob[:8] != RASTER_MAGIC:
        raise AdapterError(f"{path}: wrong raster magic")
    width, height = np.frombuffer(blob, dtype="<u4", count=2, offset=8)
    ignore = int(np.frombuffer(blob, dtype="<i4", count=1, offset=16)[0])
    labels = np.frombuffer(blob, dtype="<i4", offset=20)
    if labels.shape[0] != int(width) * int(height):
        raise AdapterError(f"{path}: truncated raster")
    return labels, ignore


def write_raster(
    labels: np.ndarray, width: int, height: int, ignore_value: int, path: str | Path
) -> None:
    """Write user label data in the raster format the core samples from."""
    labels = np.ascontiguousarray(labels, dtype="<i4").ravel()
    if labels.shape[0] != width * height:
        raise AdapterError(f"{path}: {labels.shape[0]} labels for {width}x{height}")
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(np.array([width, height], dtype="<u4").tobytes())
        fh.write(np.array([ignore_value], dtype="<i4").tobytes())
        fh.write(labels.tobytes())


def _write_payload(path: Path, payload: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(np.ascontiguousarray(payload).tobytes())


def _clean_rows(rows: np.ndarray, source_id: str) -> np.ndarray:
    """Same acceptance band and renormalization rule as the core loader."""
    if not np.isfinite(rows).all():
        bad = int(np.where(~np.isfinite(rows).all(axis=1))[0][0])
        raise AdapterError(f"{source_id}: non-finite value in row {bad}")
    if (rows < 0).any():
        bad = int(np.where((rows < 0).any(axis=1))[0][0])
        raise AdapterError(f"{source_id}: negative value in row {bad}")
    sums = rows.sum(axis=1, dtype=np.float64)
    off = np.abs(sums - 1.0) > ROW_SUM_BAND
    if off.any():
        bad = int(np.argmax(off))
        raise AdapterError(
            f"{source_id}: row {bad} sums to {sums[bad]:.6f}, "
            f"outside [{1 - ROW_SUM_BAND}, {1 + ROW_SUM_BAND}]"
        )
    drifted = np.abs(sums - 1.0) > ROW_SUM_CLEAN
    if drifted.any():
        rows = rows.copy()
        rows[drifted] = (
            rows[drifted].astype(np.float64) / sums[drifted, None]
        ).astype(np.float32)
    return rows


def gather_ground_truth(
    entries: Sequence[tuple[str, int]], raster_dir: str | Path
) -> np.ndarray:
    """Labels at the sampled pixels, in entry order."""
    raster_dir = Path(raster_dir)
    cache: dict[str, tuple[np.ndarray, int]] = {}
    out = np.empty(len(entries), dtype=np.int32)
    for row, (image_id, pixel) in enumerate(entries):
        if image_id not in cache:
            path = raster_dir / f"{image_id}.bin"
            if not path.is_file():
                raise AdapterError(f"entry {row}: no raster for image {image_id!r}")
            cache[image_id] = read_raster(path)
        labels, ignore = cache[image_id]
        if not 0 <= pixel < labels.shape[0]:
            raise AdapterError(f"entry {row}: pixel {pixel} outside {image_id!r}")
        label = int(labels[pixel])
        if label == ignore:
            raise AdapterError(f"entry {row}: pixel {pixel} is ignored in {image_id!r}")
        out[row] = label
    return out


def export_bundle(job: ExportJob) -> Path:
    """Materialize the bundle directory; returns its path.

    The result passes ``enseep validate`` as written: float payloads are
    byte-identical to what the core itself would store for the same
    values.
    """
    entries = read_index_list(job.index_file)
    if not entries:
        raise AdapterError("sample-index file has no entries")
    gt = gather_ground_truth(entries, job.raster_dir)
    num_classes = len(job.target_class_names)
    if gt.max() >= num_classes or gt.min() < 0:
        raise AdapterError(
            f"ground-truth label {int(gt.max())} outside the "
            f"{num_classes}-class target space"
        )

    # group entries by image, preserving entry order for each write
    by_image: dict[str, list[int]] = {}
    order: dict[str, list[int]] = {}
    for row, (image_id, pixel) in enumerate(entries):
        by_image.setdefault(image_id, []).append(pixel)
        order.setdefault(image_id, []).append(row)

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources_json = []
    for source in job.sources:
        z_dim = len(source.class_names)
        if z_dim != source.source_classes:
            raise AdapterError(
                f"{source.source_id}: source_classes={source.source_classes} "
                f"but {z_dim} class names"
            )
        matrix = np.empty((len(entries), z_dim), dtype=np.float32)
        for image_id, pixels in by_image.items():
            pixel_arr = np.asarray(pixels, dtype=np.int64)
            rows = source.rows_for(image_id, pixel_arr)
            if rows.shape != (len(pixels), z_dim):
                raise AdapterError(
                    f"{source.source_id}: provider returned shape {rows.shape} "
                    f"for image {image_id!r}, expected {(len(pixels), z_dim)}"
                )
            matrix[np.asarray(order[image_id])] = rows.astype(np.float32)
        matrix = _clean_rows(matrix, source.source_id)
        pred_file = f"pred_{source.source_id}.bin"
        _write_payload(out_dir / pred_file, matrix.astype("<f4", copy=False))
        sources_json.append(
            {
                "source_id": source.source_id,
                "dataset_name": source.dataset_name,
                "architecture_tag": source.architecture_tag,
                "pretraining_tag": source.pretraining_tag,
                "source_performance": source.source_performance,
                "source_size": source.source_size,
                "source_classes": source.source_classes,
                "space": {
                    "id": source.space_id,
                    "class_names": list(source.class_names),
                },
                "pred_file": pred_file,
            }
        )

    _write_payload(out_dir / "gt.bin", gt.astype("<i4", copy=False))
    manifest = {
        "schema_version": 1,
        "n": len(entries),
        "target_space": {
            "id": job.target_space_id,
            "class_names": list(job.target_class_names),
        },
        "ground_truth_file": "gt.bin",
        "provenance": [[a, b] for a, b in entries],
        "sources": sources_json,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir
