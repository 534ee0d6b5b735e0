"""Desk-scale benchmark grid: methods x group counts x request kinds.

For every cell the same unlearning request is served by each method, the
unlearning step is timed (median over repeats, one warmup discarded), and the
resulting model is scored on the surviving users' test interactions. Rows use
the shared report schema; `seconds` here carries real wall-clock measurements
and is the one column that varies between identical runs.
"""

from pathlib import Path

import numpy as np

from .embedding import EmbedConfig, train_embedding
from .evaluation import RankEvalConfig, ndcg_hr_at_10, time_median
from .grouping import ClusterConfig, make_plan
from .hypergraph import WalkConfig, build_hypergraph, random_walk
from .ingest import InteractionMatrix, SplitSpec, build_matrix, load_ratings, split
from .models import TrainConfig
from .pipeline import (RequestGenerator, csisa_shards, csisa_unlearn,
                       generate_request, learn, retrain_baseline, served_params,
                       unlearn)
from .synthetic import SyntheticConfig, synthetic_ratings

LASER_SOURCES = {"l_cbkm": "collab_embedding", "l_bkm": "raw_ratings", "l_rand": "random"}
METHODS = ("retrain", "csisa", "l_cbkm", "l_bkm", "l_rand")


def _dense_rows(matrix: InteractionMatrix) -> np.ndarray:
    rows = np.zeros((matrix.n_users, matrix.n_items))
    rows[matrix.flat_users(), matrix.item_idx] = matrix.ratings
    return rows


def _bench_data(cfg, seed):
    d = cfg["data"]
    if d["format"] == "synthetic":
        syn = SyntheticConfig(n_users=d.getint("n_users"), n_items=d.getint("n_items"),
                              n_clusters=d.getint("n_clusters"),
                              ratings_per_user=d.getint("ratings_per_user"),
                              degree_jitter=d.getint("degree_jitter"),
                              r_max=d.getfloat("r_max"), seed=seed)
        matrix = build_matrix(synthetic_ratings(syn), min_interactions=1, r_max=syn.r_max)
    else:
        triples = load_ratings(d["path"], d["format"])
        matrix = build_matrix(triples, d.getint("min_interactions"))
    return split(matrix, SplitSpec(d.getfloat("train_fraction"), seed))


def _collab_points(cfg, train, seed) -> np.ndarray:
    w, e = cfg["walk"], cfg["embed"]
    graph = build_hypergraph(train, w.getint("l_order"))
    corpus = random_walk(graph, WalkConfig(w.getint("repetition"), w.getint("depth"),
                                           w.getint("l_order"), seed))
    vectors, _ = train_embedding(corpus, EmbedConfig(
        e.getint("dim"), e.getint("window"), e.getint("negatives"), e.getint("epochs"),
        e.getfloat("learning_rate"), e.getfloat("min_learning_rate"), seed))
    return vectors


def run_bench(cfg, seed: int, threads: int, workdir) -> list:
    b = cfg["bench"]
    methods = [m.strip() for m in b["methods"].split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown bench methods {unknown}; choose from {METHODS}")
    s_values = [int(x) for x in b["s_values"].split(",")]
    kinds = [k.strip() for k in b["request_kinds"].split(",") if k.strip()]
    model_kinds = [m.strip() for m in b["model_kinds"].split(",") if m.strip()]
    k_percent = b.getfloat("k_percent")
    repeats = b.getint("repeats")

    workdir = Path(workdir)
    train, test = _bench_data(cfg, seed)
    points = _collab_points(cfg, train, seed)
    raw_points = _dense_rows(train) if any(m == "l_bkm" for m in methods) else None
    t = cfg["train"]
    config = TrainConfig(b.getint("total_epochs"), t.getint("batch_size"),
                         t.getint("negatives_per_positive"), t.getfloat("learning_rate"),
                         seed)
    eval_cfg = RankEvalConfig(cfg["eval"].getint("cutoff"),
                              cfg["eval"].getint("negatives_per_test"), seed)
    rows = []
    for model_kind in model_kinds:
        for s in s_values:
            plans = {"l_cbkm": make_plan(points, ClusterConfig(s, seed=seed, source="collab_embedding")),
                     "l_rand": make_plan(points, ClusterConfig(s, seed=seed, source="random"))}
            if raw_points is not None:
                plans["l_bkm"] = make_plan(raw_points, ClusterConfig(s, seed=seed, source="raw_ratings"))
            base_plan = plans["l_cbkm"]
            for kind in kinds:
                request = generate_request(train, RequestGenerator(kind, k_percent, seed))
                edited = train.remove_users(request.user_ids)
                test_kept = test.restrict_users(edited.active_users())
                for method in methods:
                    tag = f"{method}_{model_kind}_s{s}_{kind}"
                    if method == "retrain":
                        model = [None]

                        def do_retrain():
                            model[0] = retrain_baseline(edited, base_plan, config, model_kind,
                                                        workdir / "tmp" / tag)
                        seconds = time_median(do_retrain, repeats)
                        final = model[0]
                    elif method == "csisa":
                        shards = csisa_shards(train, base_plan, config, model_kind, threads)
                        model = [None]

                        def do_csisa():
                            model[0], _, _ = csisa_unlearn(train, base_plan, config, model_kind,
                                                           request, shards, threads)
                        seconds = time_median(do_csisa, repeats)
                        final = model[0]
                    else:
                        chain = learn(train, plans[method], config, model_kind,
                                      workdir / "chains" / tag)
                        holder = [None]

                        def do_unlearn():
                            new_chain, _ = unlearn(chain, train, request,
                                                   workdir / "tmp" / tag)
                            holder[0] = new_chain
                        seconds = time_median(do_unlearn, repeats)
                        final, _ = holder[0].final_params()
                    result = ndcg_hr_at_10(served_params(final, edited), edited,
                                           test_kept, eval_cfg)
                    rows.append({"method": method, "model": model_kind, "S": s,
                                 "request_kind": kind, "K": f"{k_percent:.9g}",
                                 "ndcg10": result.ndcg, "hr10": result.hr,
                                 "seconds": seconds, "seed": seed})
    return rows
