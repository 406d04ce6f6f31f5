"""Nearest-neighbor search through q-metric projections and q-pruning VP-trees."""

from .qcore import INF, DissimilarityKind, QExponent, dissimilarity, pairwise, q_combine, q_path_length, q_triangle_violation
from .projection import ProjectionConfig, ProjectionMode, canonical_approx, canonical_exact, extend_with_query, project
from .vptree import VpTree, prune_decision
from .embedding import MlpParams, TrainConfig, forward, train
from .pipeline import Index, IndexConfig, build_index, load_index, query, save_index, two_stage_query

__all__ = [
    "INF",
    "DissimilarityKind",
    "QExponent",
    "dissimilarity",
    "pairwise",
    "q_combine",
    "q_path_length",
    "q_triangle_violation",
    "ProjectionConfig",
    "ProjectionMode",
    "canonical_approx",
    "canonical_exact",
    "extend_with_query",
    "project",
    "VpTree",
    "prune_decision",
    "MlpParams",
    "TrainConfig",
    "forward",
    "train",
    "Index",
    "IndexConfig",
    "build_index",
    "load_index",
    "query",
    "save_index",
    "two_stage_query",
]
