"""Normal-feature-memory anomaly scoring and a benchmark evaluation harness.

Feature matrices come in as NFMB files, external detectors as score CSVs.
The pipeline partitions training data by supervision level, builds a memory
of normal features, scores test samples against it, fuses the result with an
external score stream and evaluates every stream overall and per category.
"""

from .errors import FileFormatError, NFMError, ValidationError
from .manifest import (
    DatasetManifest,
    SampleRecord,
    SupervisionPartition,
    category_view,
    load_manifest,
    partition_supervision,
    supervision_view,
)
from .memory_bank import (
    MemoryBank,
    NeighborSet,
    build_memory,
    gather_pool,
    k_center_greedy,
    load_bank,
    nearest,
    save_bank,
)
from .metrics import (
    CiEstimate,
    EvalReport,
    RocCurve,
    ThresholdMetrics,
    auroc,
    bootstrap_ci,
    evaluate,
    roc_points,
    select_threshold,
)
from .scoring import FusionConfig, PipelineConfig, fuse, memory_score, score_stream, select_representative
from .tensor_io import ScoreTable, read_features, read_scores, write_features, write_scores

__version__ = "0.1.0"

__all__ = [
    "CiEstimate",
    "DatasetManifest",
    "EvalReport",
    "FileFormatError",
    "FusionConfig",
    "MemoryBank",
    "NFMError",
    "NeighborSet",
    "PipelineConfig",
    "RocCurve",
    "SampleRecord",
    "ScoreTable",
    "SupervisionPartition",
    "ThresholdMetrics",
    "ValidationError",
    "auroc",
    "bootstrap_ci",
    "build_memory",
    "category_view",
    "evaluate",
    "fuse",
    "gather_pool",
    "k_center_greedy",
    "load_bank",
    "load_manifest",
    "memory_score",
    "nearest",
    "partition_supervision",
    "read_features",
    "read_scores",
    "roc_points",
    "save_bank",
    "score_stream",
    "select_representative",
    "select_threshold",
    "supervision_view",
    "write_features",
    "write_scores",
]
