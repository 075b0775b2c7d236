"""presel: deterministic task-aware coreset selection over image features.

Given unlabeled-image features grouped by vision task plus reference-model
loss records for a small labeled subset, the engine estimates per-task
importance from loss ratios, turns it into integer sampling budgets, clusters
each task's features, and picks the most representative samples per cluster
by neighbor centrality.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .budgeting import TaskBudget, task_quotas, task_scores, task_weights
from .data import (
    DatasetManifest,
    FeatureMatrix,
    LossRecord,
    SampleRecord,
    SelectionEntry,
    SelectionManifest,
    ValidationReport,
    load_features,
    load_losses,
    load_manifest,
    load_selection,
    save_features,
    save_losses,
    save_manifest,
    save_selection,
    validate_inputs,
)
from .geometry import ClusterAssignment, default_cluster_count, kmeans, nc_scores
from .relevance import IrsRecord, compute_irs_records, irs, response_nll
from .selector import (
    ClusterQuota,
    SelectionConfig,
    SelectionResult,
    baseline_select,
    cluster_quotas,
    ref_split,
    run_selection,
    select_cluster,
)
from .synth import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "TaskBudget",
    "task_quotas",
    "task_scores",
    "task_weights",
    "DatasetManifest",
    "FeatureMatrix",
    "LossRecord",
    "SampleRecord",
    "SelectionEntry",
    "SelectionManifest",
    "ValidationReport",
    "load_features",
    "load_losses",
    "load_manifest",
    "load_selection",
    "save_features",
    "save_losses",
    "save_manifest",
    "save_selection",
    "validate_inputs",
    "ClusterAssignment",
    "default_cluster_count",
    "kmeans",
    "nc_scores",
    "IrsRecord",
    "compute_irs_records",
    "irs",
    "response_nll",
    "ClusterQuota",
    "SelectionConfig",
    "SelectionResult",
    "baseline_select",
    "cluster_quotas",
    "ref_split",
    "run_selection",
    "select_cluster",
    "SynthSpec",
    "generate",
    "__version__",
]
