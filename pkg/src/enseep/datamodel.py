"""Domain types and the on-disk prediction-bundle format.

A bundle directory holds everything needed to score one target training
set against a pool of source models:

    manifest.json       dimensions, label spaces, per-source metadata
    gt.bin              ground-truth labels, int32 little-endian
    pred_<id>.bin       one probability matrix per source, float32
                        little-endian, row-major

Binary files start with the 8-byte magic ``EEPB0001``; all dimensions
live in the manifest only. Loaded structures are immutable and safe to
share across parallel workers.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BundleIOError, ValidationError

MATRIX_MAGIC = b"EEPB0001"
SCHEMA_VERSION = 1

# Rows whose float64 sum is outside 1 +/- ROW_SUM_BAND are rejected as
# corrupt; rows inside the band but further than ROW_SUM_CLEAN from 1 are
# renormalized. A row normalized here always re-sums to within ~6e-8 of 1,
# so a write/load round trip never changes stored bits.
ROW_SUM_BAND = 1e-4
ROW_SUM_CLEAN = 1e-6

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")


def check_identifier(value: str, what: str) -> str:
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise ValidationError(
            f"{what} {value!r} is not a valid identifier "
            "(letters, digits, '_', '.', '-'; must not start with punctuation)"
        )
    return value


@dataclass(frozen=True)
class LabelSpace:
    """An ordered, named set of class labels."""

    id: str
    class_names: tuple[str, ...]

    def __post_init__(self):
        check_identifier(self.id, "label-space id")
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if len(self.class_names) < 2:
            raise ValidationError(f"label space {self.id!r} needs >= 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError(f"label space {self.id!r} has duplicate class names")

    @property
    def cardinality(self) -> int:
        return len(self.class_names)


@dataclass(eq=False)
class SampleSet:
    """Ground-truth labels of the sampled target training set."""

    target_space: LabelSpace
    ground_truth: np.ndarray  # (n,) int32, values in [0, cardinality)
    provenance: tuple[tuple[str, int], ...] | None = None

    def __post_init__(self):
        gt = np.ascontiguousarray(self.ground_truth, dtype=np.int32)
        if gt.ndim != 1 or gt.shape[0] < 1:
            raise ValidationError("ground truth must be a non-empty 1-d vector")
        if gt.min() < 0 or gt.max() >= self.target_space.cardinality:
            bad = int(np.argmax((gt < 0) | (gt >= self.target_space.cardinality)))
            raise ValidationError(
                f"ground-truth label {int(gt[bad])} at row {bad} outside "
                f"[0, {self.target_space.cardinality})"
            )
        self.ground_truth = gt
        if self.provenance is not None:
            prov = tuple((str(a), int(b)) for a, b in self.provenance)
            if len(prov) != gt.shape[0]:
                raise ValidationError("provenance length must match sample count")
            self.provenance = prov

    @property
    def n(self) -> int:
        return int(self.ground_truth.shape[0])


def _clean_probability_rows(probs: np.ndarray, source_id: str) -> np.ndarray:
    """Validate a probability matrix and absorb float32 round-off.

    Rejects NaN/inf/negative entries and rows outside the acceptance
    band; renormalizes rows that drifted by more than ROW_SUM_CLEAN.
    """
    if probs.ndim != 2:
        raise ValidationError(f"{source_id}: prediction matrix must be 2-d")
    if not np.isfinite(probs).all():
        row = int(np.where(~np.isfinite(probs).all(axis=1))[0][0])
        raise ValidationError(f"{source_id}: non-finite probability in row {row}")
    if (probs < 0).any():
        row = int(np.where((probs < 0).any(axis=1))[0][0])
        raise ValidationError(f"{source_id}: negative probability in row {row}")
    sums = probs.sum(axis=1, dtype=np.float64)
    off_band = np.abs(sums - 1.0) > ROW_SUM_BAND
    if off_band.any():
        row = int(np.argmax(off_band))
        raise ValidationError(
            f"{source_id}: row {row} sums to {sums[row]:.6f}, outside "
            f"[{1 - ROW_SUM_BAND}, {1 + ROW_SUM_BAND}]"
        )
    drifted = np.abs(sums - 1.0) > ROW_SUM_CLEAN
    if drifted.any():
        probs = probs.copy() if not probs.flags.writeable else probs
        probs[drifted] = (
            probs[drifted].astype(np.float64) / sums[drifted, None]
        ).astype(np.float32)
    return probs


@dataclass(eq=False)
class SourcePredictions:
    """One source model's probability outputs on the target samples.

    Rows are renormalized on construction (see _clean_probability_rows),
    so the stored matrix always has rows summing to 1 within ~1e-7.
    """

    source_id: str
    space: LabelSpace
    probs: np.ndarray  # (n, |space|) float32, row i = p(z | x_i)

    def __post_init__(self):
        check_identifier(self.source_id, "source id")
        probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        probs = _clean_probability_rows(probs, self.source_id)
        if probs.shape[1] != self.space.cardinality:
            raise ValidationError(
                f"{self.source_id}: matrix has {probs.shape[1]} columns, "
                f"label space has {self.space.cardinality}"
            )
        self.probs = probs

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])


@dataclass(frozen=True)
class SourceMeta:
    """Target-agnostic facts about a source model, used by the BASE score."""

    source_id: str
    dataset_name: str
    architecture_tag: str
    pretraining_tag: str
    source_performance: float  # test score on the source dataset, in [0, 1]
    source_size: int  # training images in the source dataset
    source_classes: int  # classes in the source label space

    def __post_init__(self):
        check_identifier(self.source_id, "source id")
        if not 0.0 <= self.source_performance <= 1.0:
            raise ValidationError(
                f"{self.source_id}: source_performance must be in [0, 1]"
            )
        if self.source_size < 1:
            raise ValidationError(f"{self.source_id}: source_size must be >= 1")
        if self.source_classes < 2:
            raise ValidationError(f"{self.source_id}: source_classes must be >= 2")


# ---------------------------------------------------------------------------
# raw binary files


def write_raw(path: Path, magic: bytes, payload: np.ndarray) -> None:
    arr = np.ascontiguousarray(payload)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(arr.tobytes())


def read_raw(path: Path, magic: bytes, dtype: str, count: int, what: str) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise BundleIOError(f"cannot read {what} file {path}: {exc}") from exc
    if blob[: len(magic)] != magic:
        raise ValidationError(f"{what} file {path} has wrong magic")
    itemsize = np.dtype(dtype).itemsize
    expected = len(magic) + count * itemsize
    if len(blob) != expected:
        raise ValidationError(
            f"{what} file {path} holds {len(blob)} bytes, manifest implies {expected}"
        )
    arr = np.frombuffer(blob, dtype=dtype, offset=len(magic))
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# bundle manifest + directory


def _space_to_json(space: LabelSpace) -> dict:
    return {"id": space.id, "class_names": list(space.class_names)}


def _space_from_json(obj: dict, where: str) -> LabelSpace:
    try:
        return LabelSpace(id=obj["id"], class_names=tuple(obj["class_names"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"manifest: malformed label space in {where}") from exc


def write_bundle(
    sample_set: SampleSet,
    predictions: Sequence[SourcePredictions],
    metas: Sequence[SourceMeta],
    path: str | Path,
) -> None:
    """Write a bundle directory; load_bundle(path) reproduces the inputs
    bit-exactly (matrices included)."""
    path = Path(path)
    meta_by_id = {m.source_id: m for m in metas}
    if len(meta_by_id) != len(metas):
        raise ValidationError("duplicate source ids in metas")
    pred_ids = [p.source_id for p in predictions]
    if len(set(pred_ids)) != len(pred_ids):
        raise ValidationError("duplicate source ids in predictions")
    missing = [i for i in pred_ids if i not in meta_by_id]
    if missing:
        raise ValidationError(f"no SourceMeta for sources: {', '.join(missing)}")
    for p in predictions:
        if p.n != sample_set.n:
            raise ValidationError(
                f"{p.source_id}: {p.n} prediction rows, sample set has {sample_set.n}"
            )

    path.mkdir(parents=True, exist_ok=True)
    sources_json = []
    for p in predictions:
        m = meta_by_id[p.source_id]
        pred_file = f"pred_{p.source_id}.bin"
        write_raw(path / pred_file, MATRIX_MAGIC, p.probs.astype("<f4", copy=False))
        sources_json.append(
            {
                "source_id": p.source_id,
                "dataset_name": m.dataset_name,
                "architecture_tag": m.architecture_tag,
                "pretraining_tag": m.pretraining_tag,
                "source_performance": m.source_performance,
                "source_size": m.source_size,
                "source_classes": m.source_classes,
                "space": _space_to_json(p.space),
                "pred_file": pred_file,
            }
        )
    write_raw(path / "gt.bin", MATRIX_MAGIC, sample_set.ground_truth.astype("<i4", copy=False))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n": sample_set.n,
        "target_space": _space_to_json(sample_set.target_space),
        "ground_truth_file": "gt.bin",
        "sources": sources_json,
    }
    if sample_set.provenance is not None:
        manifest["provenance"] = [[a, b] for a, b in sample_set.provenance]
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_bundle(
    path: str | Path,
) -> tuple[SampleSet, list[SourcePredictions], list[SourceMeta]]:
    """Load and validate a bundle directory.

    Every prediction row is checked (non-negative, finite, sum within the
    acceptance band) and renormalized if it drifted; violations are
    reported with source id and row index.
    """
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise BundleIOError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest.json is not valid JSON: {exc}") from exc
    if "schema_version" not in manifest:
        raise ValidationError("manifest.json lacks schema_version")

    try:
        n = int(manifest["n"])
        target_space = _space_from_json(manifest["target_space"], "target_space")
        gt_file = manifest["ground_truth_file"]
        sources_json = manifest.get("sources", [])
    except KeyError as exc:
        raise ValidationError(f"manifest.json lacks required key {exc}") from exc

    gt = read_raw(path / gt_file, MATRIX_MAGIC, "<i4", n, "ground-truth")
    provenance = None
    if manifest.get("provenance") is not None:
        provenance = tuple((a, int(b)) for a, b in manifest["provenance"])
    sample_set = SampleSet(
        target_space=target_space, ground_truth=gt, provenance=provenance
    )

    predictions: list[SourcePredictions] = []
    metas: list[SourceMeta] = []
    for entry in sources_json:
        try:
            source_id = entry["source_id"]
            space = _space_from_json(entry["space"], source_id)
            pred_file = entry["pred_file"]
            meta = SourceMeta(
                source_id=source_id,
                dataset_name=entry["dataset_name"],
                architecture_tag=entry["architecture_tag"],
                pretraining_tag=entry["pretraining_tag"],
                source_performance=float(entry["source_performance"]),
                source_size=int(entry["source_size"]),
                source_classes=int(entry["source_classes"]),
            )
        except KeyError as exc:
            raise ValidationError(
                f"manifest source entry {entry.get('source_id', '?')!r} lacks {exc}"
            ) from exc
        flat = read_raw(
            path / pred_file,
            MATRIX_MAGIC,
            "<f4",
            n * space.cardinality,
            f"prediction ({source_id})",
        )
        probs = flat.reshape(n, space.cardinality)
        predictions.append(SourcePredictions(source_id=source_id, space=space, probs=probs))
        metas.append(meta)
    return sample_set, predictions, metas
