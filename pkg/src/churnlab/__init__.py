"""Prediction churn measurement and churn-reduction training at desk scale."""

__version__ = "0.1.0"

from .data import Dataset, SeedBundle, augment, epoch_order, gen_blobs, load_csv
from .errors import ChurnlabError, ConfigError, NumericError, ParseError, SchemaError, UsageError
from .harness import (
    ExperimentConfig,
    ExperimentSummary,
    RunArtifact,
    ablation_grid,
    ensemble_distill_run,
    run_experiment,
    run_training,
    summarize_pairwise,
)
from .losses import MethodSpec, RampSchedule, coefficient_at, landscape_scan
from .metrics import (
    audit_bounds,
    check_binary_monotonicity,
    churn,
    churn_report,
    confidence,
    distances,
    ece,
    predict_labels,
    schurn,
    slice_churn,
)
from .tensor import LrSchedule, ModelParams, OptState, Tape, forward_probs, lr_at, optimizer_step
