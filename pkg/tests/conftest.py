import numpy as np
import pytest

from enseep.datamodel import LabelSpace, SampleSet, SourceMeta, SourcePredictions


def make_space(num_classes: int, space_id: str = "tgt") -> LabelSpace:
    return LabelSpace(
        id=space_id, class_names=tuple(f"{space_id}_c{i}" for i in range(num_classes))
    )


def make_sample_set(gt, num_classes=None) -> SampleSet:
    gt = np.asarray(gt, dtype=np.int32)
    if num_classes is None:
        num_classes = max(int(gt.max()) + 1, 2)
    return SampleSet(target_space=make_space(num_classes), ground_truth=gt)


def random_predictions(source_id, n, z_dim, rng) -> SourcePredictions:
    m = rng.random((n, z_dim))
    m /= m.sum(axis=1, keepdims=True)
    return SourcePredictions(
        source_id=source_id,
        space=make_space(z_dim, space_id=f"{source_id}_space"),
        probs=m.astype(np.float32),
    )


def simple_meta(source_id, performance=0.5, size=1000, classes=10) -> SourceMeta:
    return SourceMeta(
        source_id=source_id,
        dataset_name=f"ds-{source_id}",
        architecture_tag="arch",
        pretraining_tag="sup",
        source_performance=performance,
        source_size=size,
        source_classes=classes,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
