"""Balanced user grouping and the cohesion-based curriculum order.

The balanced clusterer alternates k-means-style centroid updates with a greedy
capacity-constrained assignment: all (user, group) candidate pairs are ranked
by priority (negative distance to centroid) and users grab their best group
that still has room, capacity ceil(N/S) per group. Cohesion of a group is the
sum of inverse pairwise distances divided by group size; training visits
groups in descending cohesion (easy first).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from ._streams import STREAM_GROUP, STREAM_RANDOM_GROUP, substream

SOURCES = ("collab_embedding", "raw_ratings", "random")
_DIST_FLOOR = 1e-8


@dataclass(frozen=True)
class ClusterConfig:
    n_groups: int
    max_iter: int = 20
    seed: int = 0
    source: str = "collab_embedding"

    def __post_init__(self):
        if self.n_groups < 1:
            raise ValueError("n_groups must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")


@dataclass(eq=False)
class GroupPlan:
    labels: np.ndarray       # length N, values in [0, n_groups)
    n_groups: int
    cohesion: np.ndarray     # length n_groups
    train_order: np.ndarray  # permutation of groups, descending cohesion
    n_iter: int = field(default=0, compare=False)

    def __eq__(self, other):
        if not isinstance(other, GroupPlan):
            return NotImplemented
        return (self.n_groups == other.n_groups
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.cohesion, other.cohesion)
                and np.array_equal(self.train_order, other.train_order))

    def group_members(self, g: int) -> np.ndarray:
        return np.nonzero(self.labels == g)[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_groups)

    def position_of_group(self, g: int) -> int:
        return int(np.nonzero(self.train_order == g)[0][0])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_groups}\n")
            fh.write(" ".join(str(int(x)) for x in self.labels) + "\n")
            fh.write(" ".join(f"{x:.17g}" for x in self.cohesion) + "\n")
            fh.write(" ".join(str(int(x)) for x in self.train_order) + "\n")

    @classmethod
    def load(cls, path) -> "GroupPlan":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh.readlines() if ln.strip()]
        if len(lines) != 4:
            raise ValueError(f"{path}: plan file needs 4 lines, found {len(lines)}")
        s = int(lines[0])
        labels = np.array(lines[1].split(), dtype=np.int64)
        cohesion = np.array(lines[2].split(), dtype=np.float64)
        order = np.array(lines[3].split(), dtype=np.int64)
        if len(cohesion) != s or len(order) != s:
            raise ValueError(f"{path}: group count mismatch")
        if labels.min() < 0 or labels.max() >= s:
            raise ValueError(f"{path}: label out of range")
        if sorted(order.tolist()) != list(range(s)):
            raise ValueError(f"{path}: train_order is not a permutation")
        return cls(labels, s, cohesion, order)


def random_balanced_labels(n: int, n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random assignment with sizes as equal as possible."""
    base, extra = divmod(n, n_groups)
    sizes = np.full(n_groups, base, dtype=np.int64)
    sizes[:extra] += 1
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.repeat(np.arange(n_groups), sizes)
    return labels


def _centroids(points: np.ndarray, labels: np.ndarray, n_groups: int) -> np.ndarray:
    d = points.shape[1]
    cent = np.zeros((n_groups, d))
    sizes = np.bincount(labels, minlength=n_groups)
    np.add.at(cent, labels, points)
    nonzero = sizes > 0
    cent[nonzero] /= sizes[nonzero][:, None]
    empty = np.nonzero(~nonzero)[0]
    if len(empty):
        # re-seed an empty centroid at the point farthest from its own centroid
        far = np.linalg.norm(points - cent[labels], axis=1)
        order = np.argsort(-far, kind="stable")
        for k, g in enumerate(empty):
            cent[g] = points[order[k]]
    return cent


def compute_similarity_kmeans(points: np.ndarray, labels: np.ndarray, n_groups: int):
    """All (user, group) pairs with priority = -distance to the group centroid.

    Returns (users, groups, priority) flattened user-major, plus the centroids.
    Empty groups are re-seeded before distances are taken.
    """
    cent = _centroids(points, labels, n_groups)
    dist = cdist(points, cent)
    n = points.shape[0]
    users = np.repeat(np.arange(n, dtype=np.int64), n_groups)
    groups = np.tile(np.arange(n_groups, dtype=np.int64), n)
    return users, groups, -dist.ravel(), cent


def _greedy_assign(users, groups, priority, n, n_groups) -> np.ndarray:
    """Highest priority first; ties by (user, group); capacity ceil(n/S).

    Only n mod S groups may actually reach the ceiling; the rest stop at the
    floor. A plain ceiling cap admits assignments like sizes (3,3,2,1) for
    n=9, S=4, and the curriculum cost analysis needs max-min <= 1.
    """
    base, extra = divmod(n, n_groups)
    order = np.lexsort((groups, users, -priority))
    labels = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(n_groups, dtype=np.int64)
    hi_used = 0
    remaining = n
    for idx in order:
        u = users[idx]
        if labels[u] >= 0:
            continue
        g = groups[idx]
        if sizes[g] < base:
            pass
        elif sizes[g] == base and hi_used < extra:
            hi_used += 1
        else:
            continue
        labels[u] = g
        sizes[g] += 1
        remaining -= 1
        if remaining == 0:
            break
    return labels


def balanced_group(points: np.ndarray, config: ClusterConfig) -> tuple[np.ndarray, int]:
    """Capacity-constrained clustering; returns (labels, iterations used)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    s = config.n_groups
    if s > n:
        raise ValueError(f"n_groups={s} exceeds n_points={n}")
    rng = substream(config.seed, STREAM_GROUP)
    labels = random_balanced_labels(n, s, rng)
    if s == 1:
        return labels, 1
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        users, groups, priority, _ = compute_similarity_kmeans(points, labels, s)
        new_labels = _greedy_assign(users, groups, priority, n, s)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return labels, n_iter


def cohesion(points: np.ndarray, group_members: np.ndarray) -> float:
    """Sum of inverse pairwise Euclidean distances over unordered pairs, / |g|."""
    m = len(group_members)
    if m == 0:
        raise ValueError("cohesion of an empty group is undefined")
    if m == 1:
        return 0.0
    d = pdist(points[np.asarray(group_members, dtype=np.int64)])
    return float(np.sum(1.0 / np.maximum(d, _DIST_FLOOR)) / m)


def order_groups(cohesion_values: np.ndarray) -> np.ndarray:
    """Group ids sorted by cohesion descending, ties broken by group id."""
    s = len(cohesion_values)
    return np.lexsort((np.arange(s), -np.asarray(cohesion_values, dtype=np.float64)))


def make_plan(points: np.ndarray, config: ClusterConfig) -> GroupPlan:
    """Labels (clustered or random per config.source), cohesion, training order.

    Cohesion always comes from `points`, whatever produced the labels, so a
    random grouping still gets a well-defined curriculum order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if config.source == "random":
        if config.n_groups > n:
            raise ValueError(f"n_groups={config.n_groups} exceeds n_points={n}")
        rng = substream(config.seed, STREAM_RANDOM_GROUP)
        labels, n_iter = random_balanced_labels(n, config.n_groups, rng), 1
    else:
        labels, n_iter = balanced_group(points, config)
    rho = np.array([cohesion(points, np.nonzero(labels == g)[0])
                    for g in range(config.n_groups)])
    return GroupPlan(labels, config.n_groups, rho, order_groups(rho), n_iter)
