"""Estimator-style wrappers around the functional cores.

These follow the fit/predict + get_params conventions so the clusterer and
the recommenders drop into pipelines and grid searches; the checkpointed
unlearning workflow stays functional in `pipeline`.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import models
from ._streams import STREAM_TRAIN, substream
from .embedding import EmbedConfig, train_embedding
from .grouping import ClusterConfig, balanced_group, compute_similarity_kmeans
from .hypergraph import WalkConfig, build_hypergraph, random_walk
from .ingest import InteractionMatrix


class BalancedKMeans(ClusterMixin, BaseEstimator):
    """Capacity-constrained k-means: sizes never differ by more than one."""

    def __init__(self, n_groups=8, max_iter=20, seed=0):
        self.n_groups = n_groups
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        config = ClusterConfig(n_groups=self.n_groups, max_iter=self.max_iter, seed=self.seed)
        labels, n_iter = balanced_group(X, config)
        self.labels_ = labels
        self.n_iter_ = n_iter
        self.n_features_in_ = X.shape[1]
        _, _, _, centers = compute_similarity_kmeans(X, labels, self.n_groups)
        self.cluster_centers_ = centers
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        d = ((X[:, None, :] - self.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)


class HypergraphEmbedding(BaseEstimator):
    """Collaborative user embedding: hypergraph walks + skip-gram.

    fit expects an InteractionMatrix; the embedding lands in `embedding_`.
    """

    def __init__(self, dim=16, window=2, negatives=5, epochs=5,
                 learning_rate=0.025, min_learning_rate=0.0001,
                 l_order=4, repetition=4, depth=8, seed=0):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.min_learning_rate = min_learning_rate
        self.l_order = l_order
        self.repetition = repetition
        self.depth = depth
        self.seed = seed

    def fit(self, X: InteractionMatrix, y=None):
        if not isinstance(X, InteractionMatrix):
            raise TypeError("HypergraphEmbedding.fit expects an InteractionMatrix")
        graph = build_hypergraph(X, self.l_order)
        corpus = random_walk(graph, WalkConfig(self.repetition, self.depth,
                                               self.l_order, self.seed))
        config = EmbedConfig(self.dim, self.window, self.negatives, self.epochs,
                             self.learning_rate, self.min_learning_rate, self.seed)
        self.embedding_, self.epoch_losses_ = train_embedding(corpus, config)
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_


class MatrixFactorizer(BaseEstimator):
    """Plain (ungrouped) DMF/NMF training with the shared RNG discipline,
    so `fit` at seed s is bit-identical to the grouped pipeline at S=1."""

    def __init__(self, model_kind="DMF", total_epochs=10, batch_size=256,
                 negatives_per_positive=4, learning_rate=0.001, seed=0):
        self.model_kind = model_kind
        self.total_epochs = total_epochs
        self.batch_size = batch_size
        self.negatives_per_positive = negatives_per_positive
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X: InteractionMatrix, y=None):
        if not isinstance(X, InteractionMatrix):
            raise TypeError("MatrixFactorizer.fit expects an InteractionMatrix")
        config = models.TrainConfig(self.total_epochs, self.batch_size,
                                    self.negatives_per_positive,
                                    self.learning_rate, self.seed)
        params = models.init_params(X.n_users, X.n_items, self.model_kind, self.seed)
        opt = models.OptimizerState.for_params(params, self.learning_rate)
        losses = []
        for epoch in range(self.total_epochs):
            rng = substream(self.seed, STREAM_TRAIN, 0, epoch)
            losses.append(models.train_epoch(params, opt, X, config, rng))
        self.params_ = params
        self.optimizer_ = opt
        self.epoch_losses_ = losses
        return self

    def predict(self, users, items):
        check_is_fitted(self, "params_")
        return models.predict(self.params_, users, items)
