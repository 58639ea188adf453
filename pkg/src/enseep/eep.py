"""Empirical label-translation model and the single-source score.

Given a source model's probability outputs on target samples, we
estimate the joint distribution of (target label, source label) with
soft counts, derive the conditional P(y|z), and compose it with the
source outputs into a predictor over target labels:

    p(y | x_i) = sum_z P(y | z) * p(z | x_i)

The source's transferability score is the mean log-probability this
predictor assigns to the ground-truth labels; it is <= 0, and 0 only
for a predictor that is always certain and correct.

All reductions run in float64 with a fixed order (samples ascending,
then source labels ascending), so results are identical regardless of
worker count. Matrices are stored in float32.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .datamodel import SampleSet, SourcePredictions
from .errors import ValidationError

# Floor applied to probabilities before taking logs. Far below anything
# float32 matrices can express, so it never distorts a meaningful score.
PROB_FLOOR = 1e-12

JOINT_ATOL = 1e-9
EEP_ROW_ATOL = 1e-6


@dataclass(eq=False)
class JointModel:
    """Soft-count joint, marginal, and conditional for one source."""

    joint: np.ndarray  # (|Y|, |Z|) float64, sums to 1
    marginal_z: np.ndarray  # (|Z|,) float64, column sums of joint
    conditional: np.ndarray  # (|Y|, |Z|) float64, columns sum to 1 (or all zero)

    def __post_init__(self):
        joint = np.asarray(self.joint, dtype=np.float64)
        if joint.ndim != 2:
            raise ValidationError("joint must be 2-d")
        if (joint < 0).any():
            raise ValidationError("joint has negative mass")
        if abs(joint.sum() - 1.0) > JOINT_ATOL:
            raise ValidationError(f"joint mass {joint.sum()!r} != 1")
        col = joint.sum(axis=0)
        if np.abs(col - self.marginal_z).max() > JOINT_ATOL:
            raise ValidationError("marginal_z inconsistent with joint")
        csum = self.conditional.sum(axis=0)
        pos = self.marginal_z > 0.0
        if pos.any() and np.abs(csum[pos] - 1.0).max() > JOINT_ATOL:
            raise ValidationError("conditional columns with mass must sum to 1")
        if (~pos).any() and np.abs(self.conditional[:, ~pos]).max() != 0.0:
            raise ValidationError("conditional columns without mass must be zero")
        self.joint = joint


@dataclass(eq=False)
class EEPMatrix:
    """Per-sample target-label probabilities of the composed predictor."""

    source_id: str
    probs: np.ndarray  # (n, |Y|) float32
    max_row_deficit: float = 0.0  # largest 1 - row_sum, from zero-mass columns

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        if probs.ndim != 2:
            raise ValidationError(f"{self.source_id}: matrix must be 2-d")
        if (probs < 0).any():
            raise ValidationError(f"{self.source_id}: negative probability")
        sums = probs.sum(axis=1, dtype=np.float64)
        if (sums > 1.0 + EEP_ROW_ATOL).any():
            row = int(np.argmax(sums))
            raise ValidationError(
                f"{self.source_id}: row {row} sums to {sums[row]!r} > 1"
            )
        self.probs = probs

    @property
    def n(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[1])


@njit(cache=True)
def _joint_kernel(probs, gt, out):
    # out: (Y, Z) float64, pre-zeroed. Samples ascending, then z ascending.
    n, z_dim = probs.shape
    for i in range(n):
        y = gt[i]
        for z in range(z_dim):
            out[y, z] += probs[i, z]


@njit(parallel=True, cache=True)
def _eep_kernel(probs, conditional, out):
    # out[i, y] = sum_z conditional[y, z] * probs[i, z], accumulated in
    # float64 with z ascending; rows are independent, so prange is safe.
    n, z_dim = probs.shape
    y_dim = conditional.shape[0]
    for i in prange(n):
        for y in range(y_dim):
            acc = 0.0
            for z in range(z_dim):
                acc += conditional[y, z] * np.float64(probs[i, z])
            out[i, y] = np.float32(acc)


def empirical_joint(preds: SourcePredictions, sample_set: SampleSet) -> JointModel:
    """Estimate the joint over (target label, source label) with soft counts.

    joint[y, z] = (1/n) * sum over samples with ground truth y of p(z|x_i).
    The accumulated mass is n up to float32 round-off of the stored rows;
    normalizing by it (rather than by n) keeps the joint exactly a
    distribution and leaves the conditional, a ratio, unchanged.
    """
    if preds.n != sample_set.n:
        raise ValidationError(
            f"{preds.source_id}: {preds.n} prediction rows, "
            f"sample set has {sample_set.n}"
        )
    if sample_set.n == 0:
        raise ValidationError("empty sample set")
    y_dim = sample_set.target_space.cardinality
    z_dim = preds.space.cardinality
    joint = np.zeros((y_dim, z_dim), dtype=np.float64)
    _joint_kernel(preds.probs, sample_set.ground_truth, joint)
    joint /= joint.sum()
    marginal_z = joint.sum(axis=0)
    conditional = np.zeros_like(joint)
    pos = marginal_z > 0.0
    conditional[:, pos] = joint[:, pos] / marginal_z[pos]
    return JointModel(joint=joint, marginal_z=marginal_z, conditional=conditional)


def eep_matrix(preds: SourcePredictions, joint_model: JointModel) -> EEPMatrix:
    """Compose the conditional with the source outputs over every target label.

    Rows sum to 1 unless the source puts mass on a label that never
    appeared in the joint (zero-mass conditional column); such deficits
    are recorded on the result and reported as a warning.
    """
    conditional = joint_model.conditional
    if conditional.shape[1] != preds.space.cardinality:
        raise ValidationError(
            f"{preds.source_id}: conditional has {conditional.shape[1]} source "
            f"labels, predictions have {preds.space.cardinality}"
        )
    out = np.empty((preds.n, conditional.shape[0]), dtype=np.float32)
    _eep_kernel(preds.probs, conditional, out)
    deficit = float(1.0 - out.sum(axis=1, dtype=np.float64).min())
    if deficit > EEP_ROW_ATOL:
        warnings.warn(
            f"{preds.source_id}: prediction mass on source labels never seen "
            f"in the sample set; rows sum to as little as {1.0 - deficit:.6f}",
            stacklevel=2,
        )
    return EEPMatrix(
        source_id=preds.source_id, probs=out, max_row_deficit=max(deficit, 0.0)
    )


def gt_probabilities(eep: EEPMatrix, sample_set: SampleSet) -> np.ndarray:
    """Predictor probability at each sample's ground-truth label, float64."""
    if eep.n != sample_set.n:
        raise ValidationError(
            f"{eep.source_id}: {eep.n} rows, sample set has {sample_set.n}"
        )
    if eep.num_classes != sample_set.target_space.cardinality:
        raise ValidationError(
            f"{eep.source_id}: {eep.num_classes} classes, target space has "
            f"{sample_set.target_space.cardinality}"
        )
    return eep.probs[np.arange(sample_set.n), sample_set.ground_truth].astype(np.float64)


def leep_from_gt_probs(g: np.ndarray) -> float:
    """Mean clamped log of ground-truth probabilities (float32 or float64)."""
    g = np.clip(np.asarray(g, dtype=np.float64), PROB_FLOOR, 1.0)
    return float(np.log(g).sum() / g.shape[0])


def leep(eep: EEPMatrix, sample_set: SampleSet) -> float:
    """Mean log-probability at the ground truth; <= 0 always."""
    return leep_from_gt_probs(gt_probabilities(eep, sample_set))
