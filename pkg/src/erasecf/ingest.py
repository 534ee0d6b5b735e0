"""Rating ingestion: file parsing, activity filtering, sparse matrix, per-user splits.

External ids from the raw files are arbitrary; after build_matrix everything
downstream works with dense 0..N-1 / 0..I-1 indices. The original ids are kept
in side maps on the matrix for traceability.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._streams import STREAM_SPLIT, substream
from .errors import EmptyDatasetError, ParseError


@dataclass(frozen=True)
class RatingTriple:
    user: int
    item: int
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def load_ratings(path, format: str = "movielens_dat") -> list[RatingTriple]:
    """Parse a ratings file into triples, keeping external ids.

    movielens_dat lines look like ``user::item::rating[::timestamp]``; csv
    needs a header row naming user,item,rating[,timestamp] in any column order.
    """
    if format == "movielens_dat":
        triples = _load_dat(path)
    elif format == "csv":
        triples = _load_csv(path)
    else:
        raise ValueError(f"unknown format {format!r}")
    if not triples:
        raise EmptyDatasetError(f"no ratings found in {path}")
    return triples


def _parse_fields(path, line_no, user_s, item_s, rating_s, ts_s):
    try:
        user = int(user_s)
        item = int(item_s)
        rating = float(rating_s)
        ts = int(ts_s) if ts_s is not None else None
    except ValueError as exc:
        raise ParseError(path, line_no, str(exc)) from None
    if not np.isfinite(rating) or rating <= 0:
        raise ParseError(path, line_no, f"rating must be a positive finite number, got {rating_s}")
    return RatingTriple(user, item, rating, ts)


def _load_dat(path) -> list[RatingTriple]:
    triples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("::")
            if len(parts) not in (3, 4):
                raise ParseError(path, line_no, f"expected 3 or 4 '::' fields, got {len(parts)}")
            ts = parts[3] if len(parts) == 4 else None
            triples.append(_parse_fields(path, line_no, parts[0], parts[1], parts[2], ts))
    return triples


def _load_csv(path) -> list[RatingTriple]:
    triples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"no ratings found in {path}") from None
        cols = {name.strip().lower(): k for k, name in enumerate(header)}
        for required in ("user", "item", "rating"):
            if required not in cols:
                raise ParseError(path, 1, f"header missing column {required!r}")
        ts_col = cols.get("timestamp")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(cols):
                raise ParseError(path, line_no, f"expected {len(cols)} fields, got {len(row)}")
            ts = row[ts_col] if ts_col is not None else None
            triples.append(
                _parse_fields(path, line_no, row[cols["user"]], row[cols["item"]], row[cols["rating"]], ts)
            )
    return triples


class InteractionMatrix:
    """Sparse user-item rating matrix in CSR-like form with dense ids.

    ``user_ptr`` has length n_users+1; row u owns ``item_idx[user_ptr[u]:user_ptr[u+1]]``
    (item ids sorted within each row) and the parallel ``ratings`` slice.
    """

    def __init__(self, n_users, n_items, user_ptr, item_idx, ratings, r_max,
                 user_ids=None, item_ids=None):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.user_ptr = np.ascontiguousarray(user_ptr, dtype=np.int64)
        self.item_idx = np.ascontiguousarray(item_idx, dtype=np.int64)
        self.ratings = np.ascontiguousarray(ratings, dtype=np.float64)
        self.r_max = float(r_max)
        # dense id -> original external id; identity when synthesized internally
        self.user_ids = np.arange(n_users, dtype=np.int64) if user_ids is None else np.asarray(user_ids, dtype=np.int64)
        self.item_ids = np.arange(n_items, dtype=np.int64) if item_ids is None else np.asarray(item_ids, dtype=np.int64)
        self._keys = None
        self._item_users = None

    # -- basic accessors -------------------------------------------------

    @property
    def n_interactions(self) -> int:
        return int(self.item_idx.shape[0])

    @property
    def sparsity(self) -> float:
        return 1.0 - self.n_interactions / (self.n_users * self.n_items)

    def degrees(self) -> np.ndarray:
        return np.diff(self.user_ptr)

    def active_users(self) -> np.ndarray:
        return np.nonzero(self.degrees() > 0)[0]

    def user_row(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.user_ptr[user], self.user_ptr[user + 1]
        return self.item_idx[lo:hi], self.ratings[lo:hi]

    def flat_users(self) -> np.ndarray:
        """User id of every stored interaction, aligned with item_idx/ratings."""
        return np.repeat(np.arange(self.n_users, dtype=np.int64), self.degrees())

    def keys(self) -> np.ndarray:
        """Sorted int64 key user*n_items+item per interaction, for membership tests."""
        if self._keys is None:
            self._keys = self.flat_users() * np.int64(self.n_items) + self.item_idx
        return self._keys

    def contains(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership test for (user, item) pairs."""
        probe = np.asarray(users, dtype=np.int64) * np.int64(self.n_items) + np.asarray(items, dtype=np.int64)
        keys = self.keys()
        if len(keys) == 0:
            return np.zeros(probe.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(keys, probe), len(keys) - 1)
        return keys[pos] == probe

    def item_users(self) -> list[np.ndarray]:
        """Per-item sorted array of users who rated it (inverted index)."""
        if self._item_users is None:
            order = np.argsort(self.item_idx, kind="stable")
            users_sorted = self.flat_users()[order]
            items_sorted = self.item_idx[order]
            counts = np.bincount(items_sorted, minlength=self.n_items)
            ptr = np.concatenate(([0], np.cumsum(counts)))
            self._item_users = [users_sorted[ptr[i]:ptr[i + 1]] for i in range(self.n_items)]
        return self._item_users

    # -- editing ---------------------------------------------------------

    def restrict_users(self, users) -> "InteractionMatrix":
        """Same index space, but only the given users keep their rows."""
        keep = np.zeros(self.n_users, dtype=bool)
        keep[np.asarray(users, dtype=np.int64)] = True
        return self._mask_rows(keep)

    def remove_users(self, users) -> "InteractionMatrix":
        """Same index space with the given users' rows emptied."""
        keep = np.ones(self.n_users, dtype=bool)
        keep[np.asarray(users, dtype=np.int64)] = False
        return self._mask_rows(keep)

    def _mask_rows(self, keep_user: np.ndarray) -> "InteractionMatrix":
        mask = np.repeat(keep_user, self.degrees())
        deg = np.where(keep_user, self.degrees(), 0)
        ptr = np.concatenate(([0], np.cumsum(deg)))
        return InteractionMatrix(self.n_users, self.n_items, ptr,
                                 self.item_idx[mask], self.ratings[mask], self.r_max,
                                 self.user_ids, self.item_ids)

    # -- comparisons -----------------------------------------------------

    def same_entries(self, other: "InteractionMatrix") -> bool:
        return (self.n_users == other.n_users and self.n_items == other.n_items
                and np.array_equal(self.user_ptr, other.user_ptr)
                and np.array_equal(self.item_idx, other.item_idx)
                and np.array_equal(self.ratings, other.ratings))

    # -- serialization ---------------------------------------------------

    def save_tsv(self, path) -> None:
        """Dense-id dump, one ``user<TAB>item<TAB>rating`` line per entry, (user, item) sorted."""
        users = self.flat_users()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# n_users={self.n_users} n_items={self.n_items} r_max={self.r_max:.9g}\n")
            for u, i, r in zip(users, self.item_idx, self.ratings):
                fh.write(f"{u}\t{i}\t{r:.9g}\n")

    @classmethod
    def load_tsv(cls, path) -> "InteractionMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ParseError(path, 1, "missing header line")
            meta = dict(kv.split("=") for kv in header[1:].split())
            n_users, n_items = int(meta["n_users"]), int(meta["n_items"])
            r_max = float(meta["r_max"])
            users, items, ratings = [], [], []
            for line_no, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ParseError(path, line_no, "expected user<TAB>item<TAB>rating")
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
        users = np.asarray(users, dtype=np.int64)
        deg = np.bincount(users, minlength=n_users) if len(users) else np.zeros(n_users, dtype=np.int64)
        ptr = np.concatenate(([0], np.cumsum(deg)))
        return cls(n_users, n_items, ptr, np.asarray(items, dtype=np.int64),
                   np.asarray(ratings, dtype=np.float64), r_max)


def build_matrix(triples: list[RatingTriple], min_interactions: int = 5,
                 r_max: float | None = None) -> InteractionMatrix:
    """Dedupe, filter low-activity users/items to a fixed point, re-index densely.

    Duplicate (user, item) pairs keep the entry with the latest timestamp
    (file order breaks ties and substitutes when timestamps are absent).
    """
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")
    if not triples:
        raise EmptyDatasetError("no triples to build from")

    ext_u = np.fromiter((t.user for t in triples), dtype=np.int64, count=len(triples))
    ext_i = np.fromiter((t.item for t in triples), dtype=np.int64, count=len(triples))
    ratings = np.fromiter((t.rating for t in triples), dtype=np.float64, count=len(triples))
    stamps = np.fromiter((t.timestamp if t.timestamp is not None else 0 for t in triples),
                         dtype=np.int64, count=len(triples))

    # dedupe on external ids: keep max (timestamp, position) per pair
    uniq_u, uc = np.unique(ext_u, return_inverse=True)
    uniq_i, ic = np.unique(ext_i, return_inverse=True)
    pair_key = uc.astype(np.int64) * len(uniq_i) + ic
    order = np.lexsort((np.arange(len(triples)), stamps, pair_key))
    last = np.concatenate((pair_key[order][1:] != pair_key[order][:-1], [True]))
    sel = order[last]

    uc, ic, ratings = uc[sel], ic[sel], ratings[sel]

    # iterate the activity filter until stable
    while True:
        u_deg = np.bincount(uc, minlength=len(uniq_u))
        i_deg = np.bincount(ic, minlength=len(uniq_i))
        keep = (u_deg[uc] >= min_interactions) & (i_deg[ic] >= min_interactions)
        if keep.all():
            break
        uc, ic, ratings = uc[keep], ic[keep], ratings[keep]
        if len(uc) == 0:
            raise EmptyDatasetError(f"filtering at min_interactions={min_interactions} removed everything")

    live_u = np.unique(uc)
    live_i = np.unique(ic)
    new_u = np.searchsorted(live_u, uc)
    new_i = np.searchsorted(live_i, ic)

    order = np.lexsort((new_i, new_u))
    new_u, new_i, ratings = new_u[order], new_i[order], ratings[order]
    deg = np.bincount(new_u, minlength=len(live_u))
    ptr = np.concatenate(([0], np.cumsum(deg)))
    return InteractionMatrix(len(live_u), len(live_i), ptr, new_i, ratings,
                             r_max if r_max is not None else float(ratings.max()),
                             user_ids=uniq_u[live_u], item_ids=uniq_i[live_i])


def split(matrix: InteractionMatrix, spec: SplitSpec) -> tuple[InteractionMatrix, InteractionMatrix]:
    """Per-user random split; every user keeps >=1 train entry and >=1 test when possible.

    Train size per user is floor(len * fraction) clamped to [1, len-1], so a
    user with 2+ ratings always lands in both halves. Users with one rating
    violate the precondition.
    """
    deg = matrix.degrees()
    active = deg > 0
    bad = np.nonzero(active & (deg < 2))[0]
    if len(bad):
        raise ValueError(f"user {bad[0]} has only {deg[bad[0]]} rating(s); need >=2 to split")

    train_mask = np.zeros(matrix.n_interactions, dtype=bool)
    for u in np.nonzero(active)[0]:
        lo, hi = matrix.user_ptr[u], matrix.user_ptr[u + 1]
        n = hi - lo
        n_train = min(max(int(n * spec.train_fraction), 1), n - 1)
        rng = substream(spec.seed, STREAM_SPLIT, u)
        picks = rng.permutation(n)[:n_train]
        train_mask[lo + picks] = True

    users_flat = matrix.flat_users()

    def take(mask):
        deg_m = np.bincount(users_flat[mask], minlength=matrix.n_users)
        ptr = np.concatenate(([0], np.cumsum(deg_m)))
        return InteractionMatrix(matrix.n_users, matrix.n_items, ptr,
                                 matrix.item_idx[mask], matrix.ratings[mask], matrix.r_max,
                                 matrix.user_ids, matrix.item_ids)

    return take(train_mask), take(~train_mask)
