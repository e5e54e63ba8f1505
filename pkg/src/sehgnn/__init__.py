"""Heterogeneous-graph node classification with precomputed metapath
aggregation, label propagation and transformer-based semantic fusion."""

__version__ = "0.1.0"

from .graph import (
    FeatureTable,
    HeteroGraph,
    LabelTable,
    NodeType,
    Relation,
    Schema,
    content_hash,
    load_graph,
    save_graph,
)
from .metapaths import (
    Metapath,
    MetapathSet,
    build_metapath_set,
    enumerate_feature_metapaths,
    enumerate_label_metapaths,
)
from .model import (
    ModelConfig,
    ModelParams,
    OptimizerState,
    adam_step,
    forward,
    fuse_weighted_sum,
    grad_check,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
)
from .propagate import (
    SemanticMatrix,
    compute_semantic_matrices,
    load_precomputed,
    oracle_aggregate,
    precompute,
    propagate_features,
    propagate_labels,
)
from .sparse import SparseMatrix, rm_diag, row_normalize, sparse_matmul, spmm
from .synth import SynthConfig, gen_synthetic
from .train import Metrics, RunConfig, TrainReport, evaluate, train

__all__ = [
    "__version__",
    "SparseMatrix", "row_normalize", "spmm", "sparse_matmul", "rm_diag",
    "Schema", "NodeType", "Relation", "FeatureTable", "LabelTable", "HeteroGraph",
    "load_graph", "save_graph", "content_hash",
    "SynthConfig", "gen_synthetic",
    "Metapath", "MetapathSet", "build_metapath_set",
    "enumerate_feature_metapaths", "enumerate_label_metapaths",
    "SemanticMatrix", "propagate_features", "propagate_labels", "oracle_aggregate",
    "precompute", "compute_semantic_matrices", "load_precomputed",
    "ModelConfig", "ModelParams", "OptimizerState", "init_params", "forward",
    "loss_and_grad", "adam_step", "grad_check", "fuse_weighted_sum",
    "save_checkpoint", "load_checkpoint",
    "RunConfig", "Metrics", "TrainReport", "train", "evaluate",
]
