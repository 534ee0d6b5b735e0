"""Ranking protocol, per-group losses, the retraining-cost model, the
utility-covariance identity, timing, and the report format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erasecf.evaluation import (REPORT_COLUMNS, CostProfile, RankEvalConfig,
                                _candidate_negatives, _rank_eval, _rank_of_last,
                                cost_lower_bound, cost_mc_sigma, expected_cost,
                                monte_carlo_cost, ndcg_hr_at_10, per_group_loss,
                                random_scorer_rank_eval, time_median,
                                utility_identity_check, write_report)
from erasecf.grouping import GroupPlan
from erasecf.ingest import InteractionMatrix, RatingTriple, build_matrix
from erasecf.models import (OptimizerState, TrainConfig, batch_loss, init_params,
                            train_epoch)
from erasecf._streams import STREAM_TRAIN, substream


def test_rank_eval_config_validation():
    with pytest.raises(ValueError):
        RankEvalConfig(cutoff=0)
    with pytest.raises(ValueError):
        RankEvalConfig(negatives_per_test=0)
    with pytest.raises(ValueError):
        RankEvalConfig(seed=-1)


def test_rank_of_last():
    assert _rank_of_last(np.array([0.1, 0.5, 0.9])) == 1
    assert _rank_of_last(np.array([0.95, 0.5, 0.9])) == 2
    # ties sink the true item below every tying negative
    assert _rank_of_last(np.full(100, 0.7)) == 100


def _one_user_eval(n_train=100, n_items=200):
    """User 0 rates items 0..n_train-1 for training and n_train in test, so the
    candidate pool is exactly the remaining 99 items and sampling is a no-op."""
    train = [RatingTriple(0, i, 4.0) for i in range(n_train)]
    test = [RatingTriple(0, n_train, 5.0)]
    pad = [RatingTriple(1, i, 3.0) for i in range(n_items)]  # keeps every item alive
    train_m = build_matrix(train + pad, min_interactions=1)
    test_m = build_matrix(test + pad, min_interactions=1).restrict_users([0])
    return train_m, test_m


def test_rank_eval_crafted_ranks():
    train_m, test_m = _one_user_eval()
    cfg = RankEvalConfig()
    true_item = 100

    def scorer_rank1(u, cands):
        return np.where(cands == true_item, 1.0, 0.0)

    res = _rank_eval(train_m, test_m, cfg, scorer_rank1)
    assert res.ndcg == pytest.approx(1.0) and res.hr == 1.0
    assert res.n_scored == 1 and res.n_reduced_pool == 0

    def scorer_rank3(u, cands):
        s = np.where(cands == true_item, 0.9, 0.0)
        s[np.isin(cands, [101, 102])] = 1.0
        return s

    res = _rank_eval(train_m, test_m, cfg, scorer_rank3)
    # 1/log2(1+3)
    assert res.ndcg == pytest.approx(0.5) and res.hr == 1.0

    def scorer_rank11(u, cands):
        s = np.where(cands == true_item, 0.9, 0.0)
        s[np.isin(cands, np.arange(101, 111))] = 1.0
        return s

    res = _rank_eval(train_m, test_m, cfg, scorer_rank11)
    assert res.ndcg == 0.0 and res.hr == 0.0

    res = _rank_eval(train_m, test_m, cfg, lambda u, c: np.ones(len(c)))
    assert res.hr == 0.0  # rank 100 on constant scores


def test_rank_eval_averages_over_interactions():
    train = [RatingTriple(0, i, 4.0) for i in range(100)]
    test = [RatingTriple(0, 100, 5.0), RatingTriple(0, 101, 5.0)]
    pad = [RatingTriple(1, i, 3.0) for i in range(202)]
    train_m = build_matrix(train + pad, min_interactions=1)
    test_m = build_matrix(test + pad, min_interactions=1).restrict_users([0])

    def scorer(u, cands):
        # item 100 always wins; item 101 loses to two specific negatives
        s = np.zeros(len(cands))
        s[cands == 100] = 1.0
        s[cands == 101] = 0.9
        s[np.isin(cands, [110, 111])] = 0.95
        return s

    res = _rank_eval(train_m, test_m, RankEvalConfig(), scorer)
    assert res.n_scored == 2
    assert res.ndcg == pytest.approx((1.0 + 0.5) / 2)
    assert res.hr == 1.0


def test_rank_eval_rejects_empty_test(synth_small):
    empty = synth_small.restrict_users([])
    with pytest.raises(ValueError, match="test set is empty"):
        _rank_eval(synth_small, empty, RankEvalConfig(), lambda u, c: np.ones(len(c)))


def test_reduced_pool_is_counted():
    triples = [RatingTriple(0, i, 4.0) for i in range(3)] + [RatingTriple(0, 3, 5.0)]
    pad = [RatingTriple(1, i, 3.0) for i in range(5)]
    train_m = build_matrix(triples[:3] + pad, min_interactions=1)
    test_m = build_matrix(triples[3:] + pad, min_interactions=1).restrict_users([0])
    res = _rank_eval(train_m, test_m, RankEvalConfig(), lambda u, c: np.arange(len(c), 0, -1.0))
    assert res.n_reduced_pool == 1  # only one unobserved item exists


def test_candidate_negatives_are_unobserved(synth_small_split):
    train, test = synth_small_split
    u = int(test.active_users()[0])
    item = int(test.user_row(u)[0][0])
    cfg = RankEvalConfig(seed=3)
    negs = _candidate_negatives(train, test, u, item, cfg)
    assert len(negs) == cfg.negatives_per_test
    assert not train.contains(np.full(len(negs), u), negs).any()
    assert not test.contains(np.full(len(negs), u), negs).any()
    assert np.array_equal(negs, _candidate_negatives(train, test, u, item, cfg))


def test_random_scorer_metrics_bounded(synth_small_split):
    train, test = synth_small_split
    res = random_scorer_rank_eval(train, test, RankEvalConfig(seed=1))
    assert res.n_scored == test.n_interactions
    assert 0.0 <= res.ndcg <= res.hr <= 1.0
    # 100 candidates, cutoff 10: a uniform scorer hits ~10% of the time
    assert 0.02 < res.hr < 0.25


def test_model_scorer_agrees_with_predict(synth_small_split):
    train, test = synth_small_split
    params = init_params(train.n_users, train.n_items, "NMF", seed=2)
    cfg = RankEvalConfig(seed=0)
    res = ndcg_hr_at_10(params, train, test, cfg)
    assert res.n_scored == test.n_interactions
    assert 0.0 <= res.ndcg <= res.hr <= 1.0


# -- per-group losses --------------------------------------------------------

def test_per_group_loss_single_group(synth_small_split):
    train, test = synth_small_split
    plan = GroupPlan(np.zeros(train.n_users, dtype=np.int64), 1,
                     np.zeros(1), np.zeros(1, dtype=np.int64))
    cfg = TrainConfig(total_epochs=2, batch_size=128, negatives_per_positive=2,
                      learning_rate=0.01, seed=4)
    losses = per_group_loss(plan, train, test, cfg, "NMF")

    params = init_params(train.n_users, train.n_items, "NMF", cfg.seed)
    opt = OptimizerState.for_params(params, cfg.learning_rate)
    for epoch in range(cfg.total_epochs):
        train_epoch(params, opt, train, cfg, substream(cfg.seed, STREAM_TRAIN, 0, epoch))
    expect = batch_loss(params, test.flat_users(), test.item_idx, test.ratings, train.r_max)
    assert losses.shape == (1,)
    assert losses[0] == expect


def test_per_group_loss_nan_without_test_rows(synth_small_split):
    train, test = synth_small_split
    half = train.n_users // 2
    labels = np.zeros(train.n_users, dtype=np.int64)
    labels[half:] = 1
    plan = GroupPlan(labels, 2, np.zeros(2), np.arange(2, dtype=np.int64))
    test_first_half = test.restrict_users(np.arange(half))
    cfg = TrainConfig(total_epochs=1, batch_size=128, negatives_per_positive=1,
                      learning_rate=0.01, seed=0)
    losses = per_group_loss(plan, train, test_first_half, cfg, "DMF")
    assert np.isfinite(losses[0])
    assert np.isnan(losses[1])


def test_per_group_loss_requires_train_rows(synth_small_split):
    train, test = synth_small_split
    labels = np.zeros(train.n_users, dtype=np.int64)
    labels[-1] = 1
    plan = GroupPlan(labels, 2, np.zeros(2), np.arange(2, dtype=np.int64))
    gutted = train.remove_users([train.n_users - 1])
    cfg = TrainConfig(total_epochs=1, seed=0)
    with pytest.raises(ValueError, match="group 1 has no training data"):
        per_group_loss(plan, gutted, test, cfg, "DMF")


# -- retraining cost ---------------------------------------------------------

def test_cost_profile_validation():
    with pytest.raises(ValueError):
        CostProfile(np.array([]))
    with pytest.raises(ValueError):
        CostProfile(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        CostProfile(np.array([[1.0], [2.0]]))


def test_expected_cost_hand_values():
    # two equal groups: suffix costs (2, 1), uniform request -> 1.5 = the bound
    assert expected_cost(CostProfile(np.array([1.0, 1.0]))) == 1.5
    assert cost_lower_bound(2.0, 2) == 1.5
    # skewed groups: (4*1 + 3*3) / 4 = 3.25, strictly above the bound 3.0
    assert expected_cost(CostProfile(np.array([1.0, 3.0]))) == 3.25
    assert cost_lower_bound(4.0, 2) == 3.0


def test_expected_cost_single_group_is_total():
    profile = CostProfile(np.array([7.25]))
    assert expected_cost(profile) == 7.25
    assert cost_lower_bound(7.25, 1) == 7.25


def test_expected_cost_closed_form():
    # summing over ordered pairs gives E = Z/2 + sum(c^2)/(2Z); an independent
    # route to the same number as the suffix formulation
    rng = np.random.default_rng(8)
    for _ in range(50):
        c = rng.uniform(0.1, 10.0, size=rng.integers(1, 12))
        profile = CostProfile(c)
        z = profile.z
        alt = z / 2.0 + np.sum(c * c) / (2.0 * z)
        assert expected_cost(profile) == pytest.approx(alt, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=16))
def test_balanced_split_minimizes_expected_cost(costs):
    profile = CostProfile(np.array(costs))
    bound = cost_lower_bound(profile.z, len(costs))
    assert expected_cost(profile) >= bound - 1e-9 * bound
    balanced = CostProfile(np.full(len(costs), profile.z / len(costs)))
    assert expected_cost(balanced) == pytest.approx(bound, rel=1e-12)


def test_monte_carlo_cost_converges():
    profile = CostProfile(np.array([1.0, 2.0, 3.0, 4.0]))
    exact = expected_cost(profile)
    for seed in range(5):
        mc = monte_carlo_cost(profile, n_trials=10_000, seed=seed)
        assert abs(mc - exact) < 3.0 * cost_mc_sigma(profile, 10_000)
    with pytest.raises(ValueError):
        monte_carlo_cost(profile, n_trials=0)


def test_cost_mc_sigma_hand_value():
    # suffix (2, 1) with p = (1/2, 1/2): var = 1/4, so sigma(100) = 0.05
    assert cost_mc_sigma(CostProfile(np.array([1.0, 1.0])), 100) == pytest.approx(0.05)


# -- utility-covariance identity ---------------------------------------------

def test_identity_hand_value():
    lhs, rhs, gap = utility_identity_check(np.array([0.0, np.log(2.0)]),
                                           np.array([0.75, 0.25]))
    assert lhs == pytest.approx(0.875, abs=1e-12)
    assert rhs == pytest.approx(0.875, abs=1e-12)
    assert gap < 1e-15


def test_identity_uniform_prior_is_exact():
    # power-of-two group count: scaling is exact, the gap is exactly zero
    rng = np.random.default_rng(4)
    losses = rng.uniform(0.0, 5.0, size=8)
    lhs, rhs, gap = utility_identity_check(losses, np.full(8, 1.0 / 8.0))
    assert gap == 0.0
    assert lhs == pytest.approx(np.mean(np.exp(-losses)), rel=1e-15)


def test_identity_thousand_random_priors():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        s = int(rng.integers(2, 12))
        losses = rng.uniform(0.0, 6.0, size=s)
        prior = rng.random(s)
        prior /= prior.sum()
        _, _, gap = utility_identity_check(losses, prior)
        worst = max(worst, gap)
    assert worst < 1e-12


def test_identity_rejects_bad_inputs():
    with pytest.raises(ValueError, match="sums to"):
        utility_identity_check(np.array([1.0, 2.0]), np.array([0.7, 0.7]))
    with pytest.raises(ValueError, match="equal length"):
        utility_identity_check(np.array([1.0, 2.0]), np.array([1.0]))


# -- timing and reports ------------------------------------------------------

def test_time_median_counts_calls():
    calls = []
    out = time_median(lambda: calls.append(1), repeats=5, warmup=2)
    assert len(calls) == 7
    assert out >= 0.0


def test_write_report_golden(tmp_path):
    rows = [
        {"method": "rollback", "model": "DMF", "S": 8, "request_kind": "rand_at_K",
         "K": 2.5, "ndcg10": 0.512345678, "hr10": 0.75, "seconds": 1.25, "seed": 0},
        {"method": "retrain", "model": "NMF", "S": 1, "request_kind": "top_at_K",
         "K": 5.0, "ndcg10": 0.25, "hr10": 0.5, "seconds": 10.0, "seed": 3},
    ]
    path = tmp_path / "report.csv"
    write_report(path, rows)
    expect = (
        "method,model,S,request_kind,K,ndcg10,hr10,seconds,seed\n"
        "rollback,DMF,8,rand_at_K,2.5,0.512346,0.750000,1.250000,0\n"
        "retrain,NMF,1,top_at_K,5.0,0.250000,0.500000,10.000000,3\n"
    )
    assert path.read_text() == expect
    assert REPORT_COLUMNS[0] == "method" and REPORT_COLUMNS[-1] == "seed"
