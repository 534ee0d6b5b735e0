"""User hypergraph with edge-dependent vertex weights, plus the random walk.

One hyperedge per user: e_i collects every user reachable from i through
short co-rating paths in the user-item bipartite graph. Each (edge, vertex)
pair carries a rating-derived weight used by the walk's vertex-selection step.
"""

from dataclasses import dataclass

import numpy as np

from ._streams import STREAM_WALK, substream
from .ingest import InteractionMatrix


@dataclass(frozen=True)
class WalkConfig:
    repetition: int = 4
    depth: int = 8
    l_order: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.repetition < 1:
            raise ValueError("repetition must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.l_order < 2:
            raise ValueError("l_order must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Hypergraph:
    n_vertices: int
    members: list        # members[e]: sorted int64 vertex ids of hyperedge e
    weights: list        # weights[e][k]: w(e, members[e][k]), all > 0
    vertex_to_edges: list  # vertex v -> sorted int64 ids of edges containing v

    def edge_sizes(self) -> np.ndarray:
        return np.fromiter((len(m) for m in self.members), dtype=np.int64, count=len(self.members))


@dataclass
class UserSequenceCorpus:
    n_vertices: int
    sequences: np.ndarray  # (n_vertices * repetition, depth + 1) int64


def _user_hop_bound(l_order: int) -> int:
    # a path with h user-hops visits h+1 users and h items: 2h+1 vertices < l
    return (l_order - 2) // 2


def reachable_neighbors(matrix: InteractionMatrix, user: int, l_order: int = 4) -> np.ndarray:
    """All users connected to `user` by a bipartite path with fewer than l_order vertices."""
    if not 0 <= user < matrix.n_users:
        raise IndexError(f"user {user} out of range [0, {matrix.n_users})")
    item_users = matrix.item_users()
    seen = {int(user)}
    frontier = [int(user)]
    for _ in range(_user_hop_bound(l_order)):
        if not frontier:
            break
        chunks = []
        for u in frontier:
            items, _ = matrix.user_row(u)
            chunks.extend(item_users[i] for i in items)
        if not chunks:
            break
        reached = np.unique(np.concatenate(chunks))
        frontier = [v for v in reached.tolist() if v not in seen]
        seen.update(frontier)
    return np.fromiter(sorted(seen), dtype=np.int64, count=len(seen))


def build_hypergraph(matrix: InteractionMatrix, l_order: int = 4) -> Hypergraph:
    """One hyperedge per user over its reachable neighbors, with rating weights.

    w(i, j) is the mean of user j's ratings over the items co-rated inside e_i
    (items rated by at least one other member too); when no such item exists
    the weight falls back to j's global mean rating.
    """
    if matrix.n_interactions == 0:
        raise ValueError("cannot build a hypergraph from an empty matrix")
    deg = matrix.degrees()
    idle = np.nonzero(deg == 0)[0]
    if len(idle):
        raise ValueError(f"user {idle[0]} has no ratings; hypergraph needs every user active")

    sums = np.add.reduceat(matrix.ratings, matrix.user_ptr[:-1])
    global_mean = sums / deg

    members = [reachable_neighbors(matrix, u, l_order) for u in range(matrix.n_users)]

    weights = []
    for e in range(matrix.n_users):
        mem = members[e]
        rows = [matrix.user_row(v) for v in mem]
        starts = np.concatenate(([0], np.cumsum([len(r[0]) for r in rows])[:-1]))
        all_items = np.concatenate([r[0] for r in rows])
        all_vals = np.concatenate([r[1] for r in rows])
        uniq, counts = np.unique(all_items, return_counts=True)
        shared = uniq[counts >= 2]
        if len(shared):
            pos = np.minimum(np.searchsorted(shared, all_items), len(shared) - 1)
            in_shared = shared[pos] == all_items
        else:
            in_shared = np.zeros(len(all_items), dtype=bool)
        hit = np.add.reduceat(in_shared.astype(np.float64), starts)
        val = np.add.reduceat(np.where(in_shared, all_vals, 0.0), starts)
        w = np.where(hit > 0, val / np.maximum(hit, 1.0), global_mean[mem])
        weights.append(w)

    # invert membership; reachability is symmetric so this mirrors `members`
    edge_of = np.repeat(np.arange(matrix.n_users, dtype=np.int64),
                        [len(m) for m in members])
    vert = np.concatenate(members)
    order = np.lexsort((edge_of, vert))
    vert_sorted, edge_sorted = vert[order], edge_of[order]
    counts = np.bincount(vert_sorted, minlength=matrix.n_users)
    ptr = np.concatenate(([0], np.cumsum(counts)))
    vertex_to_edges = [edge_sorted[ptr[v]:ptr[v + 1]] for v in range(matrix.n_users)]

    return Hypergraph(matrix.n_users, members, weights, vertex_to_edges)


def _pick(rng: np.random.Generator, cum: np.ndarray) -> int:
    """Index drawn with probability proportional to the increments of cum."""
    x = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, x, side="right")), len(cum) - 1)


def walk_sequence(graph: Hypergraph, start: int, depth: int,
                  rng: np.random.Generator,
                  edge_cum: list, weight_cum: list) -> np.ndarray:
    seq = np.empty(depth + 1, dtype=np.int64)
    seq[0] = start
    v = start
    for step in range(1, depth + 1):
        e = graph.vertex_to_edges[v][_pick(rng, edge_cum[v])]
        v = int(graph.members[e][_pick(rng, weight_cum[e])])
        seq[step] = v
    return seq


def random_walk(graph: Hypergraph, config: WalkConfig) -> UserSequenceCorpus:
    """`repetition` sequences per vertex; each step picks a containing hyperedge
    with probability proportional to its size, then a member vertex with
    probability proportional to w(e, v). Per-(vertex, repetition) substreams."""
    sizes = graph.edge_sizes().astype(np.float64)
    edge_cum = [np.cumsum(sizes[edges]) for edges in graph.vertex_to_edges]
    weight_cum = [np.cumsum(w) for w in graph.weights]

    n = graph.n_vertices
    out = np.empty((n * config.repetition, config.depth + 1), dtype=np.int64)
    row = 0
    for v in range(n):
        for rep in range(config.repetition):
            rng = substream(config.seed, STREAM_WALK, v, rep)
            out[row] = walk_sequence(graph, v, config.depth, rng, edge_cum, weight_cum)
            row += 1
    return UserSequenceCorpus(n, out)


def dump_hypergraph(graph: Hypergraph, path) -> None:
    """Debug dump: one line per edge, `edge_id: v,w(e,v);...`, ids ascending."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in range(len(graph.members)):
            parts = ";".join(f"{v},{w:.9g}" for v, w in zip(graph.members[e], graph.weights[e]))
            fh.write(f"{e}: {parts}\n")
