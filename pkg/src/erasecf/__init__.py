"""Erasable collaborative filtering: grouped sequential training with
checkpoint-rollback unlearning, plus the retrain and shard baselines."""

from .embedding import EmbedConfig, train_embedding
from .estimators import BalancedKMeans, HypergraphEmbedding, MatrixFactorizer
from .grouping import ClusterConfig, GroupPlan, cohesion, make_plan
from .hypergraph import Hypergraph, WalkConfig, build_hypergraph, random_walk, reachable_neighbors
from .ingest import InteractionMatrix, RatingTriple, SplitSpec, build_matrix, load_ratings, split
from .models import ModelParams, OptimizerState, TrainConfig, init_params, predict
from .pipeline import (CheckpointChain, RequestGenerator, UnlearnRequest, csisa,
                       generate_request, learn, locate, retrain_baseline,
                       served_params, unlearn)
from .evaluation import (CostProfile, RankEvalConfig, expected_cost,
                         monte_carlo_cost, ndcg_hr_at_10, per_group_loss,
                         utility_identity_check)

__version__ = "0.1.0"

__all__ = [
    "BalancedKMeans", "CheckpointChain", "ClusterConfig", "CostProfile",
    "EmbedConfig", "GroupPlan", "Hypergraph", "HypergraphEmbedding",
    "InteractionMatrix", "MatrixFactorizer", "ModelParams", "OptimizerState",
    "RankEvalConfig", "RatingTriple", "RequestGenerator", "SplitSpec",
    "TrainConfig", "UnlearnRequest", "WalkConfig", "build_hypergraph",
    "build_matrix", "cohesion", "csisa", "expected_cost", "generate_request",
    "init_params", "learn", "load_ratings", "locate", "make_plan",
    "monte_carlo_cost", "ndcg_hr_at_10", "per_group_loss", "predict",
    "random_walk", "reachable_neighbors", "retrain_baseline", "served_params",
    "split", "train_embedding", "unlearn", "utility_identity_check",
]
