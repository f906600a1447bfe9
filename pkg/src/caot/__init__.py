"""Consistency-aware adaptive optimal-transport pseudo-labeling for clustering.

The package solves an entropic transport problem whose cluster-side marginal
is estimated adaptively and whose objective carries a quadratic semantic
consistency term, turns the resulting couplings into hard pseudo-labels, and
uses them to train small clustering heads over precomputed or synthetic
embeddings. Evaluation (Hungarian-matched accuracy, NMI) and a CLI round out
the toolkit.
"""

from .core import NumericError, clamp_log, logsumexp_row, softmax_rows
from .evaluation import accuracy, hungarian, nmi
from .labeling import PseudoLabels, labels_from_plan, labels_from_prediction, same_cluster_sets
from .losses import (
    LossValue,
    Temperatures,
    attention_loss,
    cluster_loss,
    combined_loss,
    cos_sim,
    fd_gradient,
    instance_loss,
)
from .pipeline import (
    BenchResult,
    Dataset,
    Heads,
    RunConfig,
    RunReport,
    forward_heads,
    init_heads,
    kmeans,
    pseudo_label_bench,
    run_pipeline,
    synth_dataset,
)
from .similarity import (
    AttentionOut,
    AttentionParams,
    attention_forward,
    attention_similarity,
    combine_similarity,
    cosine_matrix,
)
from .solver import (
    CaotParams,
    OtProblem,
    TransportPlan,
    b_of_h,
    caot_solve,
    dual_update,
    grad_f,
    inner_solve,
    newton_h,
    objective,
    sinkhorn_fixed,
)

__version__ = "0.1.0"

__all__ = [
    "NumericError",
    "softmax_rows",
    "logsumexp_row",
    "clamp_log",
    "CaotParams",
    "OtProblem",
    "TransportPlan",
    "grad_f",
    "objective",
    "dual_update",
    "b_of_h",
    "newton_h",
    "inner_solve",
    "caot_solve",
    "sinkhorn_fixed",
    "AttentionParams",
    "AttentionOut",
    "attention_forward",
    "attention_similarity",
    "cosine_matrix",
    "combine_similarity",
    "PseudoLabels",
    "labels_from_plan",
    "labels_from_prediction",
    "same_cluster_sets",
    "Temperatures",
    "LossValue",
    "cos_sim",
    "attention_loss",
    "cluster_loss",
    "instance_loss",
    "combined_loss",
    "fd_gradient",
    "hungarian",
    "accuracy",
    "nmi",
    "Dataset",
    "Heads",
    "RunConfig",
    "RunReport",
    "BenchResult",
    "kmeans",
    "synth_dataset",
    "init_heads",
    "forward_heads",
    "run_pipeline",
    "pseudo_label_bench",
]
