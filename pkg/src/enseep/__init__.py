"""Transferability scoring and ranking for ensembles of source models."""

import warnings as _warnings

# numba probes TBB on parallel-runtime startup and falls back cleanly;
# the probe warning is noise for every run.
_warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

__version__ = "0.1.0"

from .datamodel import (
    LabelSpace,
    SampleSet,
    SourceMeta,
    SourcePredictions,
    load_bundle,
    write_bundle,
)
from .eep import EEPMatrix, JointModel, eep_matrix, empirical_joint, leep
from .errors import (
    BundleIOError,
    DegenerateInputError,
    InvariantViolation,
    ValidationError,
)
from .metrics import (
    Ensemble,
    EnsembleDistribution,
    argmax_predictions,
    base_score,
    e_leep,
    ensemble_distribution,
    iou_eep,
    mean_iou,
    ms_leep,
    soft_iou_eep,
    soft_weights,
)
from .sampler import (
    LabelRaster,
    SampleIndexList,
    class_frequencies,
    read_raster,
    sample_pixels,
    write_raster,
)
from .selection import (
    RankedList,
    ScoreConfig,
    ScoreTable,
    SourcePool,
    enumerate_ensembles,
    preselect_sources,
    score_all,
    top_k,
)
from .correlation import (
    CorrelationReport,
    PerformanceTable,
    correlation_report,
    kendall_tau,
    pearson,
    weighted_kendall_tau,
)
from .synthetic import (
    BenchConfig,
    SyntheticSourceSpec,
    gen_source,
    gen_target,
    oracle_performance,
    run_benchmark,
)
