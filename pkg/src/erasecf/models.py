"""DMF and NMF recommenders with hand-derived gradients and Adam.

Both models score a (user, item) pair in [0, 1] and train against normalized
binary cross entropy (ratings divided by r_max, sampled negatives at 0).

DMF: each embedding runs through its own two-layer ReLU tower (16 -> 64 -> 32)
and the prediction is the cosine of the tower outputs, floored at 1e-6.
NMF: an element-wise product branch (16) and an MLP branch over the
concatenated embeddings (32 -> 64 -> 32) feed a joint affine + sigmoid head.

Everything is float64 and deterministic. Embedding gradients stay row-sparse:
Adam moments for alpha/beta are touched only for rows present in the batch
(global step for bias correction), so a user outside the current training
slice keeps bit-identical rows - the property the unlearning equivalence
relies on.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from ._streams import STREAM_INIT, substream
from .errors import CheckpointFormatError, DivergenceError
from .ingest import InteractionMatrix

EMBED_DIM = 16
HIDDEN = (64, 32)
PRED_FLOOR = 1e-6      # DMF cosine floor
LOSS_CLAMP = 1e-6      # BCE log clamp
COS_DENOM_FLOOR = 1e-12
MODEL_KINDS = ("DMF", "NMF")

_MAGIC = b"ECKP"
_VERSION = 1


def param_shapes(model_kind: str, n_users: int, n_items: int, embed_dim: int = EMBED_DIM):
    h1, h2 = HIDDEN
    if model_kind == "DMF":
        return {
            "alpha": (n_users, embed_dim), "beta": (n_items, embed_dim),
            "U1": (embed_dim, h1), "ub1": (h1,), "U2": (h1, h2), "ub2": (h2,),
            "V1": (embed_dim, h1), "vb1": (h1,), "V2": (h1, h2), "vb2": (h2,),
        }
    if model_kind == "NMF":
        return {
            "alpha": (n_users, embed_dim), "beta": (n_items, embed_dim),
            "M1": (2 * embed_dim, h1), "mb1": (h1,), "M2": (h1, h2), "mb2": (h2,),
            "H": (embed_dim + h2, 1), "hb": (1,),
        }
    raise ValueError(f"unknown model_kind {model_kind!r}")


@dataclass
class ModelParams:
    model_kind: str
    n_users: int
    n_items: int
    embed_dim: int
    arrays: dict

    def copy(self) -> "ModelParams":
        return ModelParams(self.model_kind, self.n_users, self.n_items, self.embed_dim,
                           {k: v.copy() for k, v in self.arrays.items()})

    def names(self) -> list:
        return list(param_shapes(self.model_kind, self.n_users, self.n_items, self.embed_dim))


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, learning_rate: float = 0.001) -> "OptimizerState":
        return cls(learning_rate=learning_rate,
                   m={k: np.zeros_like(a) for k, a in params.arrays.items()},
                   v={k: np.zeros_like(a) for k, a in params.arrays.items()})

    def copy(self) -> "OptimizerState":
        return OptimizerState(self.learning_rate, self.beta1, self.beta2, self.eps, self.step,
                              {k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()})


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 50
    batch_size: int = 256
    negatives_per_positive: int = 4
    learning_rate: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.negatives_per_positive < 0:
            raise ValueError("negatives_per_positive must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def init_params(n_users: int, n_items: int, model_kind: str, seed: int,
                embed_dim: int = EMBED_DIM) -> ModelParams:
    """All parameters i.i.d. N(0, 0.01^2), drawn in fixed name order."""
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    shapes = param_shapes(model_kind, n_users, n_items, embed_dim)
    rng = substream(seed, STREAM_INIT)
    arrays = {name: rng.normal(0.0, 0.01, size=shape) for name, shape in shapes.items()}
    return ModelParams(model_kind, n_users, n_items, embed_dim, arrays)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    if a.model_kind != b.model_kind or a.arrays.keys() != b.arrays.keys():
        return False
    return all(a.arrays[k].tobytes() == b.arrays[k].tobytes() for k in a.arrays)


# -- forward / backward ------------------------------------------------------

def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(s):
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _forward(params: ModelParams, users: np.ndarray, items: np.ndarray):
    p = params.arrays
    au = p["alpha"][users]
    bi = p["beta"][items]
    if params.model_kind == "DMF":
        z1u = au @ p["U1"] + p["ub1"]; h1u = _relu(z1u)
        z2u = h1u @ p["U2"] + p["ub2"]; h2u = _relu(z2u)
        z1v = bi @ p["V1"] + p["vb1"]; h1v = _relu(z1v)
        z2v = h1v @ p["V2"] + p["vb2"]; h2v = _relu(z2v)
        na = np.linalg.norm(h2u, axis=1)
        nb = np.linalg.norm(h2v, axis=1)
        raw_denom = na * nb
        denom = np.maximum(raw_denom, COS_DENOM_FLOOR)
        cos = (h2u * h2v).sum(axis=1) / denom
        yhat = np.clip(cos, PRED_FLOOR, 1.0)
        cache = (au, bi, z1u, h1u, z2u, h2u, z1v, h1v, z2v, h2v, na, nb, raw_denom, denom, cos)
        return yhat, cache
    z0 = np.concatenate((au, bi), axis=1)
    z1 = z0 @ p["M1"] + p["mb1"]; h1 = _relu(z1)
    z2 = h1 @ p["M2"] + p["mb2"]; h2 = _relu(z2)
    gmf = au * bi
    fused = np.concatenate((gmf, h2), axis=1)
    s = (fused @ p["H"]).ravel() + p["hb"][0]
    yhat = _sigmoid(s)
    cache = (au, bi, z0, z1, h1, z2, h2, gmf, fused, s, yhat)
    return yhat, cache


def predict(params: ModelParams, users, items) -> np.ndarray:
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.size and (users.min() < 0 or users.max() >= params.n_users):
        raise IndexError("user index out of range")
    if items.size and (items.min() < 0 or items.max() >= params.n_items):
        raise IndexError("item index out of range")
    yhat, _ = _forward(params, users, items)
    return yhat


def bce_loss(yhat: np.ndarray, ratings: np.ndarray, r_max: float):
    """Normalized BCE mean and its gradient wrt yhat (zero where the clamp binds)."""
    rt = ratings / r_max
    yc = np.clip(yhat, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    loss = float(-np.mean(rt * np.log(yc) + (1.0 - rt) * np.log(1.0 - yc)))
    inside = (yhat > LOSS_CLAMP) & (yhat < 1.0 - LOSS_CLAMP)
    grad = np.where(inside, (-rt / yc + (1.0 - rt) / (1.0 - yc)) / len(yhat), 0.0)
    return loss, grad


def batch_loss(params: ModelParams, users, items, ratings, r_max: float) -> float:
    yhat, _ = _forward(params, np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64))
    loss, _ = bce_loss(yhat, np.asarray(ratings, dtype=np.float64), r_max)
    return loss


def _rows_to_sparse(idx: np.ndarray, dense_rows: np.ndarray):
    uniq, inv = np.unique(idx, return_inverse=True)
    acc = np.zeros((len(uniq), dense_rows.shape[1]))
    np.add.at(acc, inv, dense_rows)
    return uniq, acc


def loss_and_grads(params: ModelParams, users, items, ratings, r_max: float):
    """Batch loss and gradients. Embedding grads come back row-sparse as
    (row_ids, grad_rows); tower grads are dense arrays."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    p = params.arrays
    yhat, cache = _forward(params, users, items)
    loss, gy = bce_loss(yhat, ratings, r_max)

    if params.model_kind == "DMF":
        (au, bi, z1u, h1u, z2u, h2u, z1v, h1v, z2v, h2v,
         na, nb, raw_denom, denom, cos) = cache
        # through the [PRED_FLOOR, 1] clip
        gc = np.where((cos > PRED_FLOOR) & (cos < 1.0), gy, 0.0)
        unclamped = raw_denom > COS_DENOM_FLOOR
        inv_denom = 1.0 / denom
        # d cos / d h2u = h2v/denom - cos * h2u / na^2 (when denom is live)
        with np.errstate(divide="ignore", invalid="ignore"):
            term_a = np.where(unclamped, cos / np.maximum(na, 1e-300) ** 2, 0.0)
            term_b = np.where(unclamped, cos / np.maximum(nb, 1e-300) ** 2, 0.0)
        da = gc[:, None] * (h2v * inv_denom[:, None] - term_a[:, None] * h2u)
        db = gc[:, None] * (h2u * inv_denom[:, None] - term_b[:, None] * h2v)

        dz2u = da * (z2u > 0)
        dU2 = h1u.T @ dz2u
        dub2 = dz2u.sum(axis=0)
        dz1u = (dz2u @ p["U2"].T) * (z1u > 0)
        dU1 = au.T @ dz1u
        dub1 = dz1u.sum(axis=0)
        dau = dz1u @ p["U1"].T

        dz2v = db * (z2v > 0)
        dV2 = h1v.T @ dz2v
        dvb2 = dz2v.sum(axis=0)
        dz1v = (dz2v @ p["V2"].T) * (z1v > 0)
        dV1 = bi.T @ dz1v
        dvb1 = dz1v.sum(axis=0)
        dbi = dz1v @ p["V1"].T

        grads = {
            "alpha": _rows_to_sparse(users, dau), "beta": _rows_to_sparse(items, dbi),
            "U1": dU1, "ub1": dub1, "U2": dU2, "ub2": dub2,
            "V1": dV1, "vb1": dvb1, "V2": dV2, "vb2": dvb2,
        }
        return loss, grads

    (au, bi, z0, z1, h1, z2, h2, gmf, fused, s, yhat_c) = cache
    ds = gy * yhat_c * (1.0 - yhat_c)
    dH = fused.T @ ds[:, None]
    dhb = np.array([ds.sum()])
    dfused = ds[:, None] * p["H"].T
    dgmf = dfused[:, :params.embed_dim]
    dh2 = dfused[:, params.embed_dim:]

    dz2 = dh2 * (z2 > 0)
    dM2 = h1.T @ dz2
    dmb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ p["M2"].T) * (z1 > 0)
    dM1 = z0.T @ dz1
    dmb1 = dz1.sum(axis=0)
    dz0 = dz1 @ p["M1"].T

    dau = dz0[:, :params.embed_dim] + dgmf * bi
    dbi = dz0[:, params.embed_dim:] + dgmf * au

    grads = {
        "alpha": _rows_to_sparse(users, dau), "beta": _rows_to_sparse(items, dbi),
        "M1": dM1, "mb1": dmb1, "M2": dM2, "mb2": dmb2,
        "H": dH, "hb": dhb,
    }
    return loss, grads


# -- Adam --------------------------------------------------------------------

def adam_step(params: ModelParams, opt: OptimizerState, grads: dict) -> None:
    """One Adam update in place. Row-sparse grads update only their rows'
    moments; bias correction uses the shared step counter."""
    opt.step += 1
    t = opt.step
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if isinstance(g, tuple):
            rows, gr = g
            m = opt.m[name]
            v = opt.v[name]
            m[rows] = b1 * m[rows] + (1.0 - b1) * gr
            v[rows] = b2 * v[rows] + (1.0 - b2) * gr * gr
            step = opt.learning_rate * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + opt.eps)
            params.arrays[name][rows] -= step
        else:
            opt.m[name] = b1 * opt.m[name] + (1.0 - b1) * g
            opt.v[name] = b2 * opt.v[name] + (1.0 - b2) * g * g
            params.arrays[name] -= opt.learning_rate * (opt.m[name] / c1) / (np.sqrt(opt.v[name] / c2) + opt.eps)


# -- training ----------------------------------------------------------------

def sample_negatives(matrix: InteractionMatrix, users: np.ndarray, k: int,
                     rng: np.random.Generator):
    """k unobserved items per positive's user, redrawn until clean."""
    full = matrix.degrees()[users] >= matrix.n_items
    if full.any():
        u = int(np.asarray(users)[full][0])
        raise ValueError(f"user {u} has rated every item; no negatives exist")
    neg_u = np.repeat(users, k)
    neg_i = rng.integers(0, matrix.n_items, size=len(neg_u))
    bad = matrix.contains(neg_u, neg_i)
    while bad.any():
        neg_i[bad] = rng.integers(0, matrix.n_items, size=int(bad.sum()))
        bad[bad] = matrix.contains(neg_u[bad], neg_i[bad])
    return neg_u, neg_i


def train_epoch(params: ModelParams, opt: OptimizerState, matrix: InteractionMatrix,
                config: TrainConfig, rng: np.random.Generator) -> float:
    """One pass over the matrix's positives in shuffled mini-batches, each
    batch padded with sampled negatives at rating 0. Returns the mean loss."""
    users_all = matrix.flat_users()
    items_all = matrix.item_idx
    ratings_all = matrix.ratings
    n_pos = len(items_all)
    if n_pos == 0:
        raise ValueError("cannot train on a matrix with no interactions")
    perm = rng.permutation(n_pos)
    k = config.negatives_per_positive
    loss_sum = 0.0
    weight = 0
    for b, lo in enumerate(range(0, n_pos, config.batch_size)):
        pick = perm[lo:lo + config.batch_size]
        bu, bi, br = users_all[pick], items_all[pick], ratings_all[pick]
        if k > 0:
            nu, ni = sample_negatives(matrix, bu, k, rng)
            bu = np.concatenate((bu, nu))
            bi = np.concatenate((bi, ni))
            br = np.concatenate((br, np.zeros(len(nu))))
        loss, grads = loss_and_grads(params, bu, bi, br, matrix.r_max)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss in batch {b}")
        adam_step(params, opt, grads)
        loss_sum += loss * len(bu)
        weight += len(bu)
    return loss_sum / weight


# -- serialization -----------------------------------------------------------

def save_params(path, params: ModelParams, opt: OptimizerState,
                t_done: int = 0, seed: int = 0) -> None:
    kind_code = MODEL_KINDS.index(params.model_kind)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IBQQIIQ", _VERSION, kind_code, params.n_users,
                             params.n_items, params.embed_dim, t_done, seed))
        fh.write(struct.pack("<ddddQ", opt.learning_rate, opt.beta1, opt.beta2,
                             opt.eps, opt.step))
        for name in params.names():
            fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())
        for store in (opt.m, opt.v):
            for name in params.names():
                fh.write(np.ascontiguousarray(store[name], dtype="<f8").tobytes())


def load_params(path):
    """Returns (params, opt, header) with header = dict(t_done=..., seed=...)."""
    head_fmt = "<IBQQIIQ"
    opt_fmt = "<ddddQ"
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic")
        raw = fh.read(struct.calcsize(head_fmt))
        if len(raw) != struct.calcsize(head_fmt):
            raise CheckpointFormatError(f"{path}: truncated header")
        version, kind_code, n_users, n_items, embed_dim, t_done, seed = struct.unpack(head_fmt, raw)
        if version != _VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        if kind_code >= len(MODEL_KINDS):
            raise CheckpointFormatError(f"{path}: unknown model kind {kind_code}")
        model_kind = MODEL_KINDS[kind_code]
        raw = fh.read(struct.calcsize(opt_fmt))
        if len(raw) != struct.calcsize(opt_fmt):
            raise CheckpointFormatError(f"{path}: truncated optimizer block")
        lr, b1, b2, eps, step = struct.unpack(opt_fmt, raw)
        shapes = param_shapes(model_kind, n_users, n_items, embed_dim)

        def read_block():
            out = {}
            for name, shape in shapes.items():
                count = int(np.prod(shape))
                data = fh.read(8 * count)
                if len(data) != 8 * count:
                    raise CheckpointFormatError(f"{path}: truncated tensor {name}")
                out[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
            return out

        arrays = read_block()
        m = read_block()
        v = read_block()
        if fh.read(1):
            raise CheckpointFormatError(f"{path}: trailing bytes")
    params = ModelParams(model_kind, n_users, n_items, embed_dim, arrays)
    opt = OptimizerState(lr, b1, b2, eps, step, m, v)
    return params, opt, {"t_done": t_done, "seed": seed}
