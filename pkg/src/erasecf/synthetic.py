"""Synthetic rating data with planted user clusters of controllable difficulty.

Users are split into contiguous clusters; each cluster owns a disjoint item
block. A user mostly rates inside the cluster block (high ratings), with a
per-cluster spill fraction leaking into foreign blocks (low ratings) and a
per-cluster noise rate replacing ratings with uniform draws. Low-noise,
low-spill clusters co-rate consistently: their members sit close in the
collaborative embedding and their ratings are easy to fit, which is exactly
the planted signal the curriculum studies need.
"""

from dataclasses import dataclass, field

import numpy as np

from ._streams import STREAM_SYNTH, substream
from .ingest import InteractionMatrix, RatingTriple, build_matrix


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 500
    n_items: int = 400
    n_clusters: int = 4
    ratings_per_user: int = 20
    degree_jitter: int = 6
    noise: tuple = ()   # per-cluster flip rate; default ramps 0.02 -> 0.5
    spill: tuple = ()   # per-cluster leak rate; default ramps 0.05 -> 0.45
    block_weights: tuple = ()   # relative item-block sizes; default equal
    subsplit: tuple = ()   # per-cluster sub-clique count; default all 1
    r_max: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_users < self.n_clusters:
            raise ValueError("need 1 <= n_clusters <= n_users")
        if self.n_items < 2 * self.n_clusters:
            raise ValueError("need at least 2 items per cluster block")
        if self.ratings_per_user < 2:
            raise ValueError("every user needs >= 2 ratings to be splittable")
        if self.block_weights and (len(self.block_weights) != self.n_clusters
                                   or min(self.block_weights) <= 0):
            raise ValueError("block_weights needs one positive weight per cluster")
        if self.subsplit and (len(self.subsplit) != self.n_clusters
                              or min(self.subsplit) < 1):
            raise ValueError("subsplit needs one count >= 1 per cluster")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def noise_of(self, k: int) -> float:
        if self.noise:
            return self.noise[k]
        if self.n_clusters == 1:
            return 0.05
        return 0.02 + 0.48 * k / (self.n_clusters - 1)

    def spill_of(self, k: int) -> float:
        if self.spill:
            return self.spill[k]
        if self.n_clusters == 1:
            return 0.05
        return 0.05 + 0.40 * k / (self.n_clusters - 1)


def cluster_of(config: SyntheticConfig, user: int) -> int:
    return user * config.n_clusters // config.n_users


def item_blocks(config: SyntheticConfig) -> list[np.ndarray]:
    """Contiguous per-cluster item blocks, sized by block_weights.

    A wide block dilutes co-rating among the cluster's members: each item
    collects fewer raters, so the planted group is internally sparse. That is
    the difficulty knob that survives into the co-rating graph; rating noise
    alone does not change who co-occurs with whom.
    """
    if not config.block_weights:
        return np.array_split(np.arange(config.n_items, dtype=np.int64), config.n_clusters)
    w = np.asarray(config.block_weights, dtype=np.float64)
    sizes = np.maximum(np.floor(w / w.sum() * config.n_items).astype(np.int64), 2)
    sizes[-1] += config.n_items - sizes.sum()
    if sizes[-1] < 2:
        raise ValueError("block_weights leave the last cluster fewer than 2 items")
    edges = np.concatenate(([0], np.cumsum(sizes)))
    all_items = np.arange(config.n_items, dtype=np.int64)
    return [all_items[edges[k]:edges[k + 1]] for k in range(config.n_clusters)]


def _user_pools(config: SyntheticConfig, blocks: list) -> dict:
    """Maps user -> item pool for in-block draws.

    Without subsplit the pool is the whole cluster block. With subsplit[k] = s,
    cluster k's members and its block are both cut into s contiguous pieces and
    each sub-clique draws only from its own mini-block, so members of different
    sub-cliques of one cluster never co-rate inside the block. Fragmented
    clusters co-embed loosely; that is the planted difficulty.
    """
    pools = {}
    labels = np.array([cluster_of(config, u) for u in range(config.n_users)])
    for k in range(config.n_clusters):
        members = np.nonzero(labels == k)[0]
        n_sub = config.subsplit[k] if config.subsplit else 1
        n_sub = min(n_sub, len(members), len(blocks[k]))
        for part, bpart in zip(np.array_split(members, n_sub),
                               np.array_split(blocks[k], n_sub)):
            for u in part:
                pools[u] = bpart
    return pools


def synthetic_ratings(config: SyntheticConfig) -> list[RatingTriple]:
    blocks = item_blocks(config)
    pools = _user_pools(config, blocks)
    triples = []
    for u in range(config.n_users):
        k = cluster_of(config, u)
        rng = substream(config.seed, STREAM_SYNTH, u)
        m = config.ratings_per_user + int(rng.integers(0, config.degree_jitter + 1))
        m = min(m, config.n_items)
        n_in = min(max(int(round(m * (1.0 - config.spill_of(k)))), 1), len(pools[u]))
        n_out = min(m - n_in, config.n_items - len(blocks[k]))
        inside = rng.choice(pools[u], size=n_in, replace=False)
        outside_pool = np.setdiff1d(np.arange(config.n_items, dtype=np.int64), blocks[k],
                                    assume_unique=True)
        outside = rng.choice(outside_pool, size=n_out, replace=False) if n_out else np.empty(0, dtype=np.int64)
        items = np.concatenate((inside, outside))
        base = np.concatenate((np.full(n_in, config.r_max),
                               np.ones(n_out)))
        flip = rng.random(len(items)) < config.noise_of(k)
        noisy = rng.integers(1, int(config.r_max) + 1, size=len(items)).astype(np.float64)
        ratings = np.where(flip, noisy, base)
        for item, r in zip(items, ratings):
            triples.append(RatingTriple(u, int(item), float(r)))
    return triples


def synthetic_matrix(config: SyntheticConfig) -> InteractionMatrix:
    """Built matrix with the planted structure; no activity filtering applied."""
    return build_matrix(synthetic_ratings(config), min_interactions=1, r_max=config.r_max)


def planted_labels(config: SyntheticConfig) -> np.ndarray:
    return np.array([cluster_of(config, u) for u in range(config.n_users)], dtype=np.int64)


@dataclass(frozen=True)
class BlobConfig:
    n_points: int = 1000
    n_blobs: int = 4
    dim: int = 16
    weights: tuple = ()   # relative blob sizes; default heavily skewed
    separation: float = 10.0
    spread: float = 0.5
    seed: int = 0


def blob_points(config: BlobConfig) -> tuple[np.ndarray, np.ndarray]:
    """Well-separated Gaussian blobs with skewed sizes; returns (points, blob labels).

    The skew is the point: a plain centroid clusterer happily reproduces the
    skewed sizes, while the capacity-constrained one must split the big blob.
    """
    rng = substream(config.seed, STREAM_SYNTH, 0)
    weights = np.asarray(config.weights if config.weights
                         else [4.0] + [1.0] * (config.n_blobs - 1), dtype=np.float64)
    if len(weights) != config.n_blobs:
        raise ValueError("weights length must equal n_blobs")
    sizes = np.floor(weights / weights.sum() * config.n_points).astype(np.int64)
    sizes[0] += config.n_points - sizes.sum()
    centers = rng.normal(0.0, 1.0, size=(config.n_blobs, config.dim))
    centers *= config.separation / np.maximum(np.linalg.norm(centers, axis=1, keepdims=True), 1e-12)
    points = np.concatenate([
        centers[b] + config.spread * rng.normal(size=(sizes[b], config.dim))
        for b in range(config.n_blobs)
    ])
    labels = np.repeat(np.arange(config.n_blobs), sizes)
    return points, labels
