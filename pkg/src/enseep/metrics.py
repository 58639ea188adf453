"""Transferability metrics for ensembles of source models.

Five scores per candidate ensemble:

    ms_leep       sum of the members' single-source scores (equivalently
                  the mean log of the product of member probabilities at
                  the ground truth, under a member-independence reading)
    e_leep        mean log of the *averaged* member probability at the
                  ground truth: log of the mean instead of mean of logs
    iou_eep       mean IoU of the argmax of the averaged distribution
                  against the ground truth
    soft_iou_eep  iou_eep with per-sample confidence weights: the
                  probability at the ground truth when the argmax is
                  correct, one minus it when wrong
    base_score    target-agnostic baseline: sum over members of
                  source performance x source images x source classes

Member averaging runs in float64, ascending member id, so every score
is independent of worker count and member order. Duplicate member lists
are accepted by the per-ensemble functions (the collapse identities are
part of the contract); the Ensemble type itself is canonical and
duplicate-free.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import SampleSet, SourceMeta
from .eep import EEPMatrix, PROB_FLOOR
from .errors import ValidationError

DIST_ROW_ATOL = 1e-6


@dataclass(frozen=True, order=True)
class Ensemble:
    """A duplicate-free, sorted set of member source ids."""

    member_ids: tuple[str, ...]

    def __post_init__(self):
        members = tuple(self.member_ids)
        if len(members) < 1:
            raise ValidationError("ensemble needs at least one member")
        if len(set(members)) != len(members):
            raise ValidationError(f"duplicate members in ensemble: {members}")
        if list(members) != sorted(members):
            raise ValidationError(f"ensemble members must be sorted: {members}")
        object.__setattr__(self, "member_ids", members)

    @classmethod
    def of(cls, ids: Sequence[str]) -> "Ensemble":
        return cls(member_ids=tuple(sorted(ids)))

    @property
    def size(self) -> int:
        return len(self.member_ids)

    @property
    def key(self) -> str:
        return "+".join(self.member_ids)

    @classmethod
    def from_key(cls, key: str) -> "Ensemble":
        return cls.of(key.split("+"))


@dataclass(eq=False)
class EnsembleDistribution:
    """Averaged member distribution over target labels, float64."""

    probs: np.ndarray  # (n, |Y|)

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or (probs < 0).any():
            raise ValidationError("distribution must be 2-d and non-negative")
        if (probs > 1.0 + DIST_ROW_ATOL).any():
            raise ValidationError("distribution entry exceeds 1")
        self.probs = probs

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])


def _members_sorted(ensemble) -> list[str]:
    """Member ids ascending; duplicates allowed for plain sequences."""
    if isinstance(ensemble, Ensemble):
        return list(ensemble.member_ids)
    members = sorted(str(m) for m in ensemble)
    if not members:
        raise ValidationError("ensemble needs at least one member")
    return members


def _matrix_lookup(
    eep_matrices: Mapping[str, EEPMatrix] | Sequence[EEPMatrix],
) -> Mapping[str, EEPMatrix]:
    if isinstance(eep_matrices, Mapping):
        return eep_matrices
    return {m.source_id: m for m in eep_matrices}


def ms_leep(leep_scores: Mapping[str, float], ensemble) -> float:
    """Sum of member single-source scores, ascending member order."""
    total = 0.0
    for member in _members_sorted(ensemble):
        if member not in leep_scores:
            raise ValidationError(f"no single-source score for member {member!r}")
        total += leep_scores[member]
    return float(total)


def ensemble_distribution(
    eep_matrices: Mapping[str, EEPMatrix] | Sequence[EEPMatrix], ensemble
) -> EnsembleDistribution:
    """Elementwise mean of member matrices, averaged ascending by id."""
    lookup = _matrix_lookup(eep_matrices)
    members = _members_sorted(ensemble)
    acc: np.ndarray | None = None
    shape = None
    for member in members:
        if member not in lookup:
            raise ValidationError(f"no predictor matrix for member {member!r}")
        probs = lookup[member].probs
        if acc is None:
            shape = probs.shape
            acc = np.zeros(shape, dtype=np.float64)
        elif probs.shape != shape:
            raise ValidationError(
                f"member {member!r} matrix shape {probs.shape} != {shape}"
            )
        acc += probs
    acc /= len(members)
    return EnsembleDistribution(probs=acc)


def e_leep(dist: EnsembleDistribution, sample_set: SampleSet) -> float:
    """Mean log of the averaged probability at the ground truth; <= 0."""
    if dist.n != sample_set.n:
        raise ValidationError(f"{dist.n} rows, sample set has {sample_set.n}")
    g = dist.probs[np.arange(dist.n), sample_set.ground_truth]
    g = np.clip(g, PROB_FLOOR, 1.0)
    return float(np.log(g).sum() / sample_set.n)


def argmax_predictions(dist: EnsembleDistribution) -> np.ndarray:
    """Most probable label per sample; ties go to the lowest label index."""
    return np.argmax(dist.probs, axis=1).astype(np.int32)


def iou_from_tallies(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> float:
    """Mean of tp / (tp + fp + fn) over classes with nonzero union."""
    union = tp + fp + fn
    present = union > 0
    if not present.any():
        raise ValidationError("every class has zero union")
    return float((tp[present] / union[present]).mean())


def mean_iou(
    pred_labels: np.ndarray, gt_labels: np.ndarray, num_classes: int
) -> float:
    """Mean intersection-over-union over classes present in gt or pred.

    Per class: intersection / (intersection + false pos + false neg).
    Classes absent from both vectors are excluded from the mean.
    """
    pred = np.asarray(pred_labels, dtype=np.int64).ravel()
    gt = np.asarray(gt_labels, dtype=np.int64).ravel()
    if pred.shape != gt.shape:
        raise ValidationError("prediction and ground-truth lengths differ")
    if pred.size == 0:
        raise ValidationError("empty label vectors")
    for name, v in (("pred", pred), ("gt", gt)):
        if v.min() < 0 or v.max() >= num_classes:
            raise ValidationError(f"{name} label outside [0, {num_classes})")
    tp = np.bincount(gt[gt == pred], minlength=num_classes).astype(np.float64)
    gt_count = np.bincount(gt, minlength=num_classes).astype(np.float64)
    pred_count = np.bincount(pred, minlength=num_classes).astype(np.float64)
    return iou_from_tallies(tp, pred_count - tp, gt_count - tp)


def iou_eep(
    eep_matrices: Mapping[str, EEPMatrix] | Sequence[EEPMatrix],
    ensemble,
    sample_set: SampleSet,
) -> float:
    """Mean IoU of the averaged distribution's argmax against the gt."""
    dist = ensemble_distribution(eep_matrices, ensemble)
    y_star = argmax_predictions(dist)
    return mean_iou(y_star, sample_set.ground_truth, sample_set.target_space.cardinality)


def soft_weights(
    dist: EnsembleDistribution, sample_set: SampleSet, y_star: np.ndarray
) -> np.ndarray:
    """Per-sample confidence weight in [0, 1].

    The probability at the ground truth when the argmax is correct;
    one minus it when the argmax is wrong.
    """
    if dist.n != sample_set.n or y_star.shape[0] != sample_set.n:
        raise ValidationError("inconsistent lengths")
    g = dist.probs[np.arange(dist.n), sample_set.ground_truth]
    correct = y_star == sample_set.ground_truth
    return np.clip(np.where(correct, g, 1.0 - g), 0.0, 1.0)


def soft_iou_eep(
    eep_matrices: Mapping[str, EEPMatrix] | Sequence[EEPMatrix],
    ensemble,
    sample_set: SampleSet,
) -> float:
    """Confidence-weighted variant of iou_eep.

    The confusion tallies accumulate per-sample weights instead of unit
    counts: weighted true positives where the argmax is correct, and the
    complementary weight into both the false-positive tally of the
    predicted class and the false-negative tally of the true class where
    it is wrong. Classes with zero weighted union are excluded.
    """
    dist = ensemble_distribution(eep_matrices, ensemble)
    y_star = argmax_predictions(dist)
    gt = sample_set.ground_truth
    num_classes = sample_set.target_space.cardinality
    w = soft_weights(dist, sample_set, y_star)
    correct = y_star == gt
    tp = np.bincount(gt[correct], weights=w[correct], minlength=num_classes)
    fp = np.bincount(y_star[~correct], weights=w[~correct], minlength=num_classes)
    fn = np.bincount(gt[~correct], weights=w[~correct], minlength=num_classes)
    return iou_from_tallies(tp, fp, fn)


def base_score(
    metas: Mapping[str, SourceMeta] | Sequence[SourceMeta], ensemble
) -> float:
    """Sum over members of performance x dataset size x class count."""
    if not isinstance(metas, Mapping):
        metas = {m.source_id: m for m in metas}
    total = 0.0
    for member in _members_sorted(ensemble):
        if member not in metas:
            raise ValidationError(f"no metadata for member {member!r}")
        m = metas[member]
        total += m.source_performance * m.source_size * m.source_classes
    return float(total)
