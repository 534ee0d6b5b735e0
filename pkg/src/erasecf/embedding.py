"""Skip-gram user embedding trained on walk corpora with negative sampling.

Plain SGD word2vec: input vectors are the product, output vectors are the
soft-max side. Negatives come from the unigram^0.75 table. Everything is
single-threaded and seed-deterministic; parameters live in float64 so the
gradient check against finite differences is meaningful.
"""

import struct
from dataclasses import dataclass

import numpy as np

from ._streams import STREAM_EMBED, substream
from .errors import CheckpointFormatError
from .hypergraph import UserSequenceCorpus

_MAGIC = b"UEMB"
_VERSION = 1
_LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 16
    window: int = 2
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def pair_loss(x: np.ndarray, rows: np.ndarray, labels: np.ndarray) -> float:
    """Negative-sampling loss of one center vector against output rows.

    rows holds the output vectors (context first, then negatives), labels the
    matching 1/0 targets. Logs are clamped for numerical bookkeeping only.
    """
    f = _sigmoid(rows @ x)
    f = np.clip(f, _LOG_CLAMP, 1.0 - _LOG_CLAMP)
    return float(-(labels * np.log(f) + (1.0 - labels) * np.log(1.0 - f)).sum())


def pair_grads(x: np.ndarray, rows: np.ndarray, labels: np.ndarray):
    """Analytic gradients of pair_loss wrt the center vector and output rows."""
    f = _sigmoid(rows @ x)
    err = f - labels
    return rows.T @ err, np.outer(err, x)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def init_vectors(n: int, dim: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    w_in = (rng.random((n, dim)) - 0.5) / dim
    w_out = np.zeros((n, dim))
    return w_in, w_out


def train_embedding(corpus: UserSequenceCorpus, config: EmbedConfig):
    """Returns (vectors, epoch_losses): the N x dim input-vector matrix and the
    mean pair loss per epoch. Sentences are visited in corpus order; the
    learning rate decays linearly per sentence from learning_rate to
    min_learning_rate over all epochs."""
    seqs = np.asarray(corpus.sequences, dtype=np.int64)
    if seqs.size == 0:
        raise ValueError("corpus is empty")
    n = corpus.n_vertices
    counts = np.bincount(seqs.ravel(), minlength=n)
    missing = np.nonzero(counts == 0)[0]
    if len(missing):
        raise ValueError(f"user {missing[0]} never appears in the corpus")

    noise_cum = np.cumsum(counts.astype(np.float64) ** 0.75)
    rng = substream(config.seed, STREAM_EMBED)
    w_in, w_out = init_vectors(n, config.dim, rng)
    if config.epochs == 0:
        return w_in, []

    k = min(config.negatives, n - 1)  # negatives are distinct and != context
    lr0, lr1 = config.learning_rate, config.min_learning_rate
    total_sentences = len(seqs) * config.epochs
    sent_no = 0
    epoch_losses = []

    for _ in range(config.epochs):
        loss_sum = 0.0
        n_pairs = 0
        for sent in seqs:
            alpha = max(lr1, lr0 - (lr0 - lr1) * (sent_no / total_sentences))
            sent_no += 1
            length = len(sent)
            for t in range(length):
                center = sent[t]
                lo = max(0, t - config.window)
                hi = min(length, t + config.window + 1)
                ctx = np.concatenate((sent[lo:t], sent[t + 1:hi]))
                if len(ctx) == 0:
                    continue
                negs = _draw_negatives(rng, noise_cum, ctx, k)
                rows_idx = np.concatenate((ctx, negs.ravel()))
                labels = np.zeros(len(rows_idx))
                labels[:len(ctx)] = 1.0
                x = w_in[center]
                rows = w_out[rows_idx]
                loss_sum += pair_loss(x, rows, labels)
                n_pairs += len(ctx)
                gx, grows = pair_grads(x, rows, labels)
                np.add.at(w_out, rows_idx, -alpha * grows)
                w_in[center] = x - alpha * gx
        epoch_losses.append(loss_sum / max(n_pairs, 1))
    return w_in, epoch_losses


def _draw_negatives(rng: np.random.Generator, noise_cum: np.ndarray,
                    ctx: np.ndarray, k: int) -> np.ndarray:
    """k negatives per context token; within a row all distinct and != context."""
    out = np.empty((len(ctx), k), dtype=np.int64)
    total = noise_cum[-1]
    for row, c in enumerate(ctx):
        chosen = []
        while len(chosen) < k:
            w = int(np.searchsorted(noise_cum, rng.random() * total, side="right"))
            w = min(w, len(noise_cum) - 1)
            if w != c and w not in chosen:
                chosen.append(w)
        out[row] = chosen
    return out


def save_embedding(path, vectors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQ", _VERSION, vectors.shape[0], vectors.shape[1]))
        fh.write(vectors.astype("<f8").tobytes())


def load_embedding(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        head = fh.read(struct.calcsize("<IQQ"))
        if len(head) != struct.calcsize("<IQQ"):
            raise CheckpointFormatError(f"{path}: truncated header")
        version, n, m = struct.unpack("<IQQ", head)
        if version != _VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        data = fh.read(8 * n * m)
        if len(data) != 8 * n * m:
            raise CheckpointFormatError(f"{path}: truncated data")
        if fh.read(1):
            raise CheckpointFormatError(f"{path}: trailing bytes")
    return np.frombuffer(data, dtype="<f8").reshape(n, m).copy()
