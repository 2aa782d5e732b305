"""linkguard: branching-point detection and resolution for constrained schema linking.

The package detects the first erroneous tokens of a constrained
schema-linking generation from per-layer hidden states, wraps the per-layer
classifiers in conformal prediction sets with coverage guarantees, aggregates
the sets into a single decision, and resolves detections by abstaining,
consulting a surrogate relevance filter, or asking a human in a live session.
"""

__version__ = "0.1.0"

from .aggregate import (
    aggregate_details,
    decide_branching,
    majority_vote,
    random_permutation_aggregate,
    vote_at_least_half,
    vote_size_bound,
)
from .catalog import Namespace, SchemaCatalog, Token, build_catalog, read_catalog, write_catalog
from .conformal import (
    ConformalCalibrator,
    calibrate_exchangeable,
    calibrate_weighted,
    pi_value,
    predict_set_exchangeable,
    predict_set_weighted,
)
from .detector import BranchDetector, OracleDetector
from .metrics import coverage_ear, set_metrics, tar_far
from .pipeline import fit_detector
from .probes import (
    LayerClassifier,
    LayerSelection,
    TrainConfig,
    auc,
    predict_score,
    select_top_k_layers,
    train_layer_classifier,
)
from .runtime import (
    LinkingSession,
    LinkRun,
    decode,
    link_tables_then_columns,
    run_policy_abstain,
    run_policy_human,
    run_policy_surrogate,
    trace_back,
)
from .simulate import SimConfig, SimWorld, generate_catalog, surrogate_answer
from .traces import (
    BranchDataset,
    GenerationTrace,
    StepOutput,
    build_branch_dataset,
    find_branching_points,
    read_traces,
    split_dataset,
    write_traces,
)

__all__ = [name for name in dir() if not name.startswith("_")]
