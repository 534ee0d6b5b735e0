"""Ranking metrics, per-group losses, retraining-cost analysis, timing.

The ranking protocol scores each held-out interaction against 99 sampled
unobserved items (fewer when a user's pool is smaller; such cases are counted
in the result). Ties rank the true item below tying negatives, so scores that
collapse to a constant yield honest near-random metrics.
"""

import time
from dataclasses import dataclass

import numpy as np

from ._streams import (STREAM_COST, STREAM_EVAL, STREAM_RANDOM_SCORE,
                       STREAM_TRAIN, substream)
from .grouping import GroupPlan
from .ingest import InteractionMatrix
from .models import (ModelParams, OptimizerState, TrainConfig, batch_loss,
                     init_params, predict, train_epoch)

REPORT_COLUMNS = ("method", "model", "S", "request_kind", "K",
                  "ndcg10", "hr10", "seconds", "seed")


@dataclass(frozen=True)
class RankEvalConfig:
    cutoff: int = 10
    negatives_per_test: int = 99
    seed: int = 0

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if self.negatives_per_test < 1:
            raise ValueError("negatives_per_test must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class RankResult:
    ndcg: float
    hr: float
    n_scored: int
    n_reduced_pool: int


@dataclass(frozen=True)
class CostProfile:
    group_costs: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.group_costs, dtype=np.float64)
        if costs.ndim != 1 or len(costs) == 0:
            raise ValueError("group_costs must be a non-empty 1-d array")
        if not (costs > 0).all():
            raise ValueError("all group costs must be positive")
        object.__setattr__(self, "group_costs", costs)

    @property
    def z(self) -> float:
        return float(self.group_costs.sum())


def _candidate_negatives(train: InteractionMatrix, test: InteractionMatrix,
                         user: int, item: int, config: RankEvalConfig) -> np.ndarray:
    tr_items, _ = train.user_row(user)
    te_items, _ = test.user_row(user)
    observed = np.union1d(tr_items, te_items)
    pool = np.setdiff1d(np.arange(train.n_items, dtype=np.int64), observed,
                        assume_unique=True)
    rng = substream(config.seed, STREAM_EVAL, user, item)
    if len(pool) <= config.negatives_per_test:
        return pool
    return pool[rng.choice(len(pool), size=config.negatives_per_test, replace=False)]


def _rank_of_last(scores: np.ndarray) -> int:
    # true item is the last candidate; ties go to the negatives
    return int(1 + np.sum(scores[:-1] >= scores[-1]))


def ndcg_hr_at_10(params: ModelParams, train: InteractionMatrix,
                  test: InteractionMatrix, config: RankEvalConfig) -> RankResult:
    """HR@cutoff and NDCG@cutoff over every test interaction."""
    return _rank_eval(train, test, config,
                      lambda u, cands: predict(params, np.full(len(cands), u), cands))


def random_scorer_rank_eval(train: InteractionMatrix, test: InteractionMatrix,
                            config: RankEvalConfig) -> RankResult:
    """Same protocol with uniform-random scores; the floor baseline."""
    def score(u, cands):
        rng = substream(config.seed, STREAM_RANDOM_SCORE, u)
        return rng.random(len(cands))
    return _rank_eval(train, test, config, score)


def _rank_eval(train, test, config, score_fn) -> RankResult:
    if test.n_interactions == 0:
        raise ValueError("test set is empty")
    hits = 0.0
    gain = 0.0
    n = 0
    reduced = 0
    for u in test.active_users():
        items, _ = test.user_row(u)
        for item in items:
            negs = _candidate_negatives(train, test, int(u), int(item), config)
            if len(negs) < config.negatives_per_test:
                reduced += 1
            cands = np.concatenate((negs, [item]))
            rank = _rank_of_last(np.asarray(score_fn(int(u), cands), dtype=np.float64))
            if rank <= config.cutoff:
                hits += 1.0
                gain += 1.0 / np.log2(rank + 1)
            n += 1
    return RankResult(gain / n, hits / n, n, reduced)


def per_group_loss(plan: GroupPlan, train: InteractionMatrix, test: InteractionMatrix,
                   config: TrainConfig, model_kind: str) -> np.ndarray:
    """Test BCE of a from-scratch model per group, trained only on that group.

    Indexed by group id. Loss is taken over the group's test positives; a
    group with no test entries gets nan.
    """
    out = np.full(plan.n_groups, np.nan)
    for g in range(plan.n_groups):
        members = plan.group_members(g)
        sub_train = train.restrict_users(members)
        sub_test = test.restrict_users(members)
        if sub_train.n_interactions == 0:
            raise ValueError(f"group {g} has no training data")
        params = init_params(train.n_users, train.n_items, model_kind, config.seed)
        opt = OptimizerState.for_params(params, config.learning_rate)
        position = plan.position_of_group(g)
        for epoch in range(config.total_epochs):
            rng = substream(config.seed, STREAM_TRAIN, position, epoch)
            train_epoch(params, opt, sub_train, config, rng)
        if sub_test.n_interactions:
            out[g] = batch_loss(params, sub_test.flat_users(), sub_test.item_idx,
                                sub_test.ratings, train.r_max)
    return out


# -- expected retraining cost ------------------------------------------------

def expected_cost(profile: CostProfile) -> float:
    """Sum over groups of (suffix cost) * (request probability c_i/Z)."""
    c = profile.group_costs
    suffix = np.cumsum(c[::-1])[::-1]
    return float(np.sum(suffix * c) / profile.z)


def cost_lower_bound(z: float, n_groups: int) -> float:
    return (z / 2.0) * (1.0 + 1.0 / n_groups)


def monte_carlo_cost(profile: CostProfile, n_trials: int, seed: int = 0) -> float:
    """Sample request locations with probability c_i/Z, average the suffix cost."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    c = profile.group_costs
    suffix = np.cumsum(c[::-1])[::-1]
    rng = substream(seed, STREAM_COST)
    draws = rng.choice(len(c), size=n_trials, p=c / profile.z)
    return float(suffix[draws].mean())


def cost_mc_sigma(profile: CostProfile, n_trials: int) -> float:
    """Std deviation of the Monte-Carlo estimator at n_trials samples."""
    c = profile.group_costs
    suffix = np.cumsum(c[::-1])[::-1]
    p = c / profile.z
    mean = float(np.sum(suffix * p))
    var = float(np.sum(suffix ** 2 * p)) - mean ** 2
    return np.sqrt(max(var, 0.0) / n_trials)


# -- the covariance identity -------------------------------------------------

def utility_identity_check(losses, prior) -> tuple[float, float, float]:
    """Prior-weighted utility vs mean utility + covariance correction.

    Utility of a group is exp(-loss). Returns (lhs, rhs, gap); the two sides
    agree to rounding for every normalized prior.
    """
    losses = np.asarray(losses, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if losses.shape != prior.shape or losses.ndim != 1:
        raise ValueError("losses and prior must be 1-d arrays of equal length")
    if abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError(f"prior sums to {prior.sum()}, expected 1")
    u = np.exp(-losses)
    lhs = float(np.sum(u * prior))
    u_mean = float(u.mean())
    rhs = u_mean + float(np.sum((u - u.mean()) * (prior - prior.mean())))
    return lhs, rhs, abs(lhs - rhs)


# -- timing ------------------------------------------------------------------

def time_median(fn, repeats: int = 5, warmup: int = 1) -> float:
    """Median wall-clock seconds of fn() over `repeats` runs after warmups."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def write_report(path, rows) -> None:
    """CSV with the fixed report schema; rows are dicts keyed by REPORT_COLUMNS."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(col, row[col]) for col in REPORT_COLUMNS) + "\n")


def _format_cell(col, value) -> str:
    if col in ("ndcg10", "hr10", "seconds"):
        return f"{float(value):.6f}"
    return str(value)
