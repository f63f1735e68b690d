"""Collaborative cloud/client sampling with compressed centroid queries and DP accounting."""

from .accountant import (
    PrivacyLedger,
    RdpCurve,
    closed_form_bound,
    compose,
    default_orders,
    gaussian_rdp,
    ledger_for_query,
    rdp_to_dp,
    subsampled_gaussian_rdp,
)
from .cluster import Codebook, assign, kmeans_compress, load_codebook, save_codebook
from .data import (
    DistanceKind,
    FeatureDataset,
    load_dataset,
    min_sq_dists,
    pairwise_min_dist,
    save_dataset,
)
from .diversity import DiverseSample, kcenter_select, random_select
from .errors import (
    BoundValidityError,
    DataFormatError,
    EcosError,
    NonPrivateError,
    ValidationError,
)
from .evalharness import (
    EvalReport,
    SynthSpec,
    compare_methods,
    diversity_metric,
    generate_synthetic,
    id_tpr,
    proximity_metric,
)
from .protocol import (
    BudgetPlan,
    RunConfig,
    Selection,
    WireStats,
    allocate_budgets,
    decompress,
    derive_subseed,
    run_protocol,
    wire_stats,
)
from .scoring import (
    ScoreReport,
    client_cost_estimate,
    client_report,
    confidence_scores,
    coverage_scores,
    privatize_scores,
    scale_scores,
)

__all__ = [
    "BoundValidityError",
    "BudgetPlan",
    "Codebook",
    "DataFormatError",
    "DistanceKind",
    "DiverseSample",
    "EcosError",
    "EvalReport",
    "FeatureDataset",
    "NonPrivateError",
    "PrivacyLedger",
    "RdpCurve",
    "RunConfig",
    "ScoreReport",
    "Selection",
    "SynthSpec",
    "ValidationError",
    "WireStats",
    "allocate_budgets",
    "assign",
    "client_cost_estimate",
    "client_report",
    "closed_form_bound",
    "compare_methods",
    "compose",
    "confidence_scores",
    "coverage_scores",
    "decompress",
    "default_orders",
    "derive_subseed",
    "diversity_metric",
    "gaussian_rdp",
    "generate_synthetic",
    "id_tpr",
    "kcenter_select",
    "kmeans_compress",
    "ledger_for_query",
    "load_codebook",
    "load_dataset",
    "min_sq_dists",
    "pairwise_min_dist",
    "privatize_scores",
    "proximity_metric",
    "random_select",
    "rdp_to_dp",
    "run_protocol",
    "save_codebook",
    "save_dataset",
    "scale_scores",
    "subsampled_gaussian_rdp",
    "wire_stats",
]
