"""Sequential grouped training, checkpoint chains, rollback unlearning, and
the sharded baseline. The heart of the suite: every unlearning route must be
bit-identical to retraining from scratch on the edited data."""

import numpy as np
import pytest

from erasecf._streams import STREAM_TRAIN, substream
from erasecf.estimators import MatrixFactorizer
from erasecf.grouping import ClusterConfig, GroupPlan, make_plan
from erasecf.ingest import InteractionMatrix, RatingTriple, build_matrix
from erasecf.models import (OptimizerState, TrainConfig, init_params, load_params,
                            params_equal, train_epoch)
from erasecf.pipeline import (CheckpointChain, RequestGenerator, UnlearnRequest,
                              csisa, csisa_shards, csisa_unlearn, generate_request,
                              learn, load_chain, locate, merge_shards,
                              retrain_baseline, save_chain, served_params, unlearn)

CFG = TrainConfig(total_epochs=2, batch_size=128, negatives_per_positive=2,
                  learning_rate=0.01, seed=4)


def _plan_for(n_users, s, seed=0):
    pts = np.random.default_rng(seed).standard_normal((n_users, 3))
    return make_plan(pts, ClusterConfig(n_groups=s, seed=seed, source="random"))


def _hand_plan(labels, order):
    labels = np.asarray(labels, dtype=np.int64)
    s = int(labels.max()) + 1
    rho = np.zeros(s)
    return GroupPlan(labels, s, rho, np.asarray(order, dtype=np.int64))


# -- request objects ---------------------------------------------------------

def test_unlearn_request_validation():
    with pytest.raises(ValueError, match="at least one"):
        UnlearnRequest(np.array([], dtype=np.int64))
    with pytest.raises(ValueError, match="duplicate"):
        UnlearnRequest(np.array([3, 3]))
    with pytest.raises(ValueError, match="negative"):
        UnlearnRequest(np.array([-1]))
    req = UnlearnRequest(np.array([9, 2, 5]))
    assert np.array_equal(req.user_ids, [2, 5, 9])  # stored sorted


def test_request_generator_validation():
    with pytest.raises(ValueError, match="kind"):
        RequestGenerator("worst_at_K", 5.0)
    with pytest.raises(ValueError):
        RequestGenerator("rand_at_K", 0.0)
    with pytest.raises(ValueError):
        RequestGenerator("rand_at_K", 100.0)
    with pytest.raises(ValueError):
        RequestGenerator("rand_at_K", 5.0, seed=-1)


# -- visit order and locate --------------------------------------------------

def test_visit_order_reverses_for_anti():
    plan = _hand_plan([0, 1, 2, 0, 1, 2], order=[2, 0, 1])
    seq = CheckpointChain(plan, "DMF", 0, "seqtrain", CFG, ".", "i", [])
    anti = CheckpointChain(plan, "DMF", 0, "anti_seqtrain", CFG, ".", "i", [])
    assert np.array_equal(seq.visit_order(), [2, 0, 1])
    assert np.array_equal(anti.visit_order(), [1, 0, 2])


def test_locate_earliest_position():
    # visit order: group 2 first, then 0, then 1
    plan = _hand_plan([0, 1, 2, 0, 1, 2], order=[2, 0, 1])
    assert locate(plan, UnlearnRequest(np.array([4]))) == 2      # group 1, last
    assert locate(plan, UnlearnRequest(np.array([0, 4]))) == 1   # span 0 and 1 -> min
    assert locate(plan, UnlearnRequest(np.array([2, 3]))) == 0   # group 2 trains first
    assert locate(plan, UnlearnRequest(np.array([4])), order="anti_seqtrain") == 0
    with pytest.raises(KeyError, match="user 6"):
        locate(plan, UnlearnRequest(np.array([6])))


# -- learn -------------------------------------------------------------------

def test_single_group_learn_matches_plain_fit(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 1)
    chain = learn(synth_small, plan, CFG, "NMF", tmp_path / "chain")
    final, _ = chain.final_params()
    est = MatrixFactorizer(model_kind="NMF", total_epochs=CFG.total_epochs,
                           batch_size=CFG.batch_size,
                           negatives_per_positive=CFG.negatives_per_positive,
                           learning_rate=CFG.learning_rate, seed=CFG.seed)
    est.fit(synth_small)
    assert params_equal(final, est.params_)


def test_learn_composes_per_group_phases(synth_small, tmp_path):
    """Two-group run re-derived by hand: init, then each group's epochs with
    the (seed, position, epoch) stream. Every checkpoint must match."""
    plan = _plan_for(synth_small.n_users, 2)
    chain = learn(synth_small, plan, CFG, "DMF", tmp_path / "chain")

    params = init_params(synth_small.n_users, synth_small.n_items, "DMF", CFG.seed)
    opt = OptimizerState.for_params(params, CFG.learning_rate)
    for pos, g in enumerate(plan.train_order):
        sub = synth_small.restrict_users(plan.group_members(int(g)))
        for epoch in range(CFG.total_epochs):
            train_epoch(params, opt, sub, CFG, substream(CFG.seed, STREAM_TRAIN, pos, epoch))
        saved, _, header = load_params(chain.checkpoint_path(pos))
        assert params_equal(saved, params)
        assert header == {"t_done": (pos + 1) * CFG.total_epochs, "seed": CFG.seed}


def test_every_group_gets_full_epoch_budget(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 3)
    chain = learn(synth_small, plan, CFG, "NMF", tmp_path / "chain")
    assert chain.epochs_per_group == CFG.total_epochs
    _, _, header = load_params(chain.checkpoint_path(2))
    assert header["t_done"] == 3 * CFG.total_epochs


def test_anti_order_visits_groups_reversed(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 2)
    chain = learn(synth_small, plan, CFG, "DMF", tmp_path / "anti", order="anti_seqtrain")

    params = init_params(synth_small.n_users, synth_small.n_items, "DMF", CFG.seed)
    opt = OptimizerState.for_params(params, CFG.learning_rate)
    for pos, g in enumerate(plan.train_order[::-1]):
        sub = synth_small.restrict_users(plan.group_members(int(g)))
        for epoch in range(CFG.total_epochs):
            train_epoch(params, opt, sub, CFG, substream(CFG.seed, STREAM_TRAIN, pos, epoch))
    final, _ = chain.final_params()
    assert params_equal(final, params)


def test_learn_input_validation(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 2)
    with pytest.raises(ValueError, match="order"):
        learn(synth_small, plan, CFG, "DMF", tmp_path, order="shuffled")
    short = _hand_plan([0, 1, 0, 1], order=[0, 1])
    with pytest.raises(ValueError, match="plan covers 4 users"):
        learn(synth_small, short, CFG, "DMF", tmp_path)
    gap = _hand_plan(np.concatenate((np.zeros(79, dtype=np.int64), [2])), order=[0, 1, 2])
    with pytest.raises(ValueError, match="group 1 has no members"):
        learn(synth_small, gap, CFG, "DMF", tmp_path)


# -- chain manifest ----------------------------------------------------------

def test_chain_manifest_round_trip(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 3)
    wd = tmp_path / "chain"
    chain = learn(synth_small, plan, CFG, "NMF", wd)
    loaded = load_chain(wd)
    assert loaded.plan == plan
    assert loaded.model_kind == "NMF" and loaded.order == "seqtrain"
    assert loaded.config == CFG
    assert loaded.checkpoints == chain.checkpoints
    assert loaded.initial_checkpoint == chain.initial_checkpoint
    assert len(loaded.erased_users) == 0
    before = (wd / "chain.txt").read_bytes()
    save_chain(loaded)
    assert (wd / "chain.txt").read_bytes() == before


def test_load_chain_requires_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="no chain manifest"):
        load_chain(tmp_path)


# -- unlearning: the equivalence oracle --------------------------------------

def test_unlearn_matches_retrain_from_scratch(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 3)
    chain = learn(synth_small, plan, CFG, "DMF", tmp_path / "full")

    # a user in the group trained second: one checkpoint survives, two retrain
    middle = int(plan.group_members(int(plan.train_order[1]))[0])
    request = UnlearnRequest(np.array([middle]))
    new_chain, edited = unlearn(chain, synth_small, request, tmp_path / "after")

    assert edited.degrees()[middle] == 0
    assert np.array_equal(new_chain.erased_users, [middle])

    oracle = retrain_baseline(edited, plan, CFG, "DMF", tmp_path / "oracle")
    got, _ = new_chain.final_params()
    assert params_equal(got, oracle)

    # checkpoint files: prefix copied bitwise, suffix equals the oracle's bytes
    oracle_chain = load_chain(tmp_path / "oracle")
    assert (new_chain.checkpoint_path(0).read_bytes()
            == chain.checkpoint_path(0).read_bytes())
    for pos in (1, 2):
        assert (new_chain.checkpoint_path(pos).read_bytes()
                == oracle_chain.checkpoint_path(pos).read_bytes())


def test_unlearn_span_rolls_back_to_earliest(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 3)
    chain = learn(synth_small, plan, CFG, "NMF", tmp_path / "full")
    first = int(plan.group_members(int(plan.train_order[0]))[0])
    last = int(plan.group_members(int(plan.train_order[2]))[0])
    request = UnlearnRequest(np.array([first, last]))
    new_chain, edited = unlearn(chain, synth_small, request, tmp_path / "after")
    oracle = retrain_baseline(edited, plan, CFG, "NMF", tmp_path / "oracle")
    got, _ = new_chain.final_params()
    assert params_equal(got, oracle)


def test_unlearn_on_anti_chain(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 2)
    chain = learn(synth_small, plan, CFG, "DMF", tmp_path / "full", order="anti_seqtrain")
    victim = int(plan.group_members(int(plan.train_order[0]))[0])  # trains last here
    new_chain, edited = unlearn(chain, synth_small, UnlearnRequest(np.array([victim])),
                                tmp_path / "after")
    oracle = retrain_baseline(edited, plan, CFG, "DMF", tmp_path / "oracle",
                              order="anti_seqtrain")
    got, _ = new_chain.final_params()
    assert params_equal(got, oracle)


def test_sequential_unlearn_requests(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 2)
    chain = learn(synth_small, plan, CFG, "NMF", tmp_path / "c0")
    g0 = plan.group_members(int(plan.train_order[0]))
    c1, m1 = unlearn(chain, synth_small, UnlearnRequest(g0[:1]), tmp_path / "c1")
    c2, m2 = unlearn(c1, m1, UnlearnRequest(g0[1:2]), tmp_path / "c2")
    assert np.array_equal(c2.erased_users, np.sort(g0[:2]))
    oracle = retrain_baseline(m2, plan, CFG, "NMF", tmp_path / "oracle")
    got, _ = c2.final_params()
    assert params_equal(got, oracle)


def test_unlearn_errors(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 2)
    chain = learn(synth_small, plan, CFG, "DMF", tmp_path / "full")
    with pytest.raises(KeyError, match="does not exist"):
        unlearn(chain, synth_small, UnlearnRequest(np.array([synth_small.n_users])),
                tmp_path / "x")
    victim = int(plan.group_members(int(plan.train_order[1]))[0])
    _, edited = unlearn(chain, synth_small, UnlearnRequest(np.array([victim])),
                        tmp_path / "once")
    with pytest.raises(KeyError, match="already erased"):
        unlearn(load_chain(tmp_path / "once"), edited,
                UnlearnRequest(np.array([victim])), tmp_path / "twice")
    # taking out a whole group leaves the plan unusable
    whole = plan.group_members(int(plan.train_order[1]))
    with pytest.raises(ValueError, match="re-group"):
        unlearn(chain, synth_small, UnlearnRequest(whole), tmp_path / "y")


def test_served_params_zeroes_dataless_rows(synth_small, tmp_path):
    plan = _plan_for(synth_small.n_users, 2)
    chain = learn(synth_small, plan, CFG, "DMF", tmp_path / "full")
    victim = int(plan.group_members(int(plan.train_order[1]))[0])
    new_chain, edited = unlearn(chain, synth_small, UnlearnRequest(np.array([victim])),
                                tmp_path / "after")
    params, _ = new_chain.final_params()
    serving = served_params(params, edited)
    assert np.all(serving.arrays["alpha"][victim] == 0.0)
    others = np.setdiff1d(np.arange(edited.n_users), [victim])
    assert np.array_equal(serving.arrays["alpha"][others], params.arrays["alpha"][others])
    assert params.arrays["alpha"][victim].any()  # original untouched


# -- sharded baseline --------------------------------------------------------

def test_csisa_single_group_equals_plain_fit(synth_small):
    plan = _plan_for(synth_small.n_users, 1)
    merged = csisa(synth_small, plan, CFG, "NMF")
    est = MatrixFactorizer(model_kind="NMF", total_epochs=CFG.total_epochs,
                           batch_size=CFG.batch_size,
                           negatives_per_positive=CFG.negatives_per_positive,
                           learning_rate=CFG.learning_rate, seed=CFG.seed)
    est.fit(synth_small)
    assert params_equal(merged, est.params_)


def test_csisa_merge_stitches_user_rows(synth_small):
    plan = _plan_for(synth_small.n_users, 2)
    shards = csisa_shards(synth_small, plan, CFG, "DMF")
    merged = merge_shards(shards, plan, CFG, "DMF",
                          synth_small.n_users, synth_small.n_items)
    for g in (0, 1):
        members = plan.group_members(g)
        assert np.array_equal(merged.arrays["alpha"][members],
                              shards[g]["alpha"][members])
    expect_beta = (shards[0]["beta"] + shards[1]["beta"]) / 2.0
    np.testing.assert_allclose(merged.arrays["beta"], expect_beta, rtol=0, atol=0)


def test_csisa_unlearn_matches_full_rebuild(synth_small):
    plan = _plan_for(synth_small.n_users, 3)
    shards = csisa_shards(synth_small, plan, CFG, "NMF")
    victim = int(plan.group_members(1)[0])
    request = UnlearnRequest(np.array([victim]))
    merged, edited, new_shards = csisa_unlearn(synth_small, plan, CFG, "NMF",
                                               request, shards)
    # untouched shards are reused as objects, not retrained
    for g in (0, 2):
        assert new_shards[g] is shards[g]
    oracle = csisa(edited, plan, CFG, "NMF")
    assert params_equal(merged, oracle)
    with pytest.raises(ValueError, match="re-group"):
        csisa_unlearn(synth_small, plan, CFG, "NMF",
                      UnlearnRequest(plan.group_members(1)), shards)


# -- request generation ------------------------------------------------------

def _uniform_degree_matrix(n_users, head_extra=0):
    """Every user rates items 0..2; user 0 optionally rates head_extra more."""
    triples = [RatingTriple(u, i, 3.0) for u in range(n_users) for i in range(3)]
    triples += [RatingTriple(0, 3 + j, 4.0) for j in range(head_extra)]
    return build_matrix(triples, min_interactions=1)


def test_generate_request_counts():
    matrix = _uniform_degree_matrix(100, head_extra=2)
    req = generate_request(matrix, RequestGenerator("rand_at_K", 2.5, seed=1))
    assert len(req.user_ids) == 3  # ceil(2.5)
    again = generate_request(matrix, RequestGenerator("rand_at_K", 2.5, seed=1))
    assert np.array_equal(req.user_ids, again.user_ids)
    other = generate_request(matrix, RequestGenerator("rand_at_K", 2.5, seed=2))
    assert not np.array_equal(req.user_ids, other.user_ids)


def test_generate_request_top_breaks_ties_by_id():
    matrix = _uniform_degree_matrix(100, head_extra=2)
    req = generate_request(matrix, RequestGenerator("top_at_K", 2.5))
    # user 0 leads on degree; everyone else ties at 3, lowest ids win
    assert np.array_equal(req.user_ids, [0, 1, 2])


def test_generate_request_ml_scale_count():
    n = 6040
    matrix = InteractionMatrix(n, 1, np.arange(n + 1), np.zeros(n, dtype=np.int64),
                               np.full(n, 4.0), 5.0)
    req = generate_request(matrix, RequestGenerator("rand_at_K", 5.0, seed=0))
    assert len(req.user_ids) == 302
    assert len(np.unique(req.user_ids)) == 302


def test_generate_request_rejects_oversized():
    matrix = _uniform_degree_matrix(10)
    with pytest.raises(ValueError, match="exceeds"):
        generate_request(matrix.remove_users(np.arange(5)),
                         RequestGenerator("rand_at_K", 80.0))


def test_expected_suffix_length_mc():
    """Single random users over a balanced 4-group plan: the retrained suffix
    averages (S+1)/2 groups."""
    plan = _plan_for(120, 4, seed=3)
    rng = np.random.default_rng(0)
    users = rng.integers(0, 120, size=1000)
    suffix = [plan.n_groups - locate(plan, UnlearnRequest(np.array([u]))) for u in users]
    assert np.mean(suffix) == pytest.approx(2.5, rel=0.05)
