"""Command-line front end: ingest -> embed -> group -> train -> unlearn -> eval,
plus the bench grid. Every command is batch-style: read config + upstream
artifact directories, write one content-addressed artifact directory.

Artifact directories are named <stage>_<fingerprint> where the fingerprint
hashes the relevant config slice, the seed, and the input artifacts, so a
stale chain can never be silently reused after data edits: any change moves
the output to a new address.
"""

import argparse
import configparser
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .embedding import EmbedConfig, load_embedding, save_embedding, train_embedding
from .errors import EmptyDatasetError
from .evaluation import RankEvalConfig, ndcg_hr_at_10, write_report
from .grouping import ClusterConfig, GroupPlan, make_plan
from .hypergraph import WalkConfig, build_hypergraph, random_walk
from .ingest import InteractionMatrix, SplitSpec, build_matrix, load_ratings, split
from .models import TrainConfig
from .pipeline import (RequestGenerator, UnlearnRequest, generate_request,
                       learn, load_chain, served_params, unlearn)
from .synthetic import SyntheticConfig, synthetic_ratings

DEFAULTS = {
    "data": {"format": "synthetic", "path": "", "min_interactions": "5",
             "train_fraction": "0.9", "n_users": "500", "n_items": "400",
             "n_clusters": "4", "ratings_per_user": "20", "degree_jitter": "6",
             "r_max": "5"},
    "walk": {"l_order": "4", "repetition": "4", "depth": "8"},
    "embed": {"dim": "16", "window": "2", "negatives": "5", "epochs": "5",
              "learning_rate": "0.025", "min_learning_rate": "0.0001"},
    "cluster": {"n_groups": "4", "max_iter": "20", "source": "collab_embedding"},
    "train": {"model_kind": "DMF", "total_epochs": "50", "batch_size": "256",
              "negatives_per_positive": "4", "learning_rate": "0.001",
              "order": "seqtrain"},
    "unlearn": {"kind": "rand_at_K", "k_percent": "5"},
    "eval": {"cutoff": "10", "negatives_per_test": "99"},
    "bench": {"methods": "retrain,csisa,l_cbkm,l_rand", "s_values": "1,4,8",
              "request_kinds": "rand_at_K,top_at_K", "k_percent": "5",
              "model_kinds": "DMF", "repeats": "3", "total_epochs": "6"},
}


def load_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file {path} not found")
        cfg.read(path)
    return cfg


def _fingerprint(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x00")
    return h.hexdigest()[:12]


def _hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def _section_tokens(cfg, section) -> str:
    return ";".join(f"{k}={v}" for k, v in sorted(cfg[section].items()))


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact {path}; run `erasecf {producer}` first")
    return path


def _load_train(data_dir: Path) -> InteractionMatrix:
    return InteractionMatrix.load_tsv(_require(Path(data_dir) / "train.tsv", "ingest"))


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    d = cfg["data"]
    if d["format"] == "synthetic":
        syn = SyntheticConfig(n_users=d.getint("n_users"), n_items=d.getint("n_items"),
                              n_clusters=d.getint("n_clusters"),
                              ratings_per_user=d.getint("ratings_per_user"),
                              degree_jitter=d.getint("degree_jitter"),
                              r_max=d.getfloat("r_max"), seed=args.seed)
        triples = synthetic_ratings(syn)
        source_tag = "synthetic"
    else:
        path = d["path"]
        if not path or not Path(path).exists():
            raise FileNotFoundError(f"dataset file {path!r} not found; set [data] path")
        triples = load_ratings(path, d["format"])
        source_tag = _hash_file(path)

    matrix = build_matrix(triples, d.getint("min_interactions"))
    train, test = split(matrix, SplitSpec(d.getfloat("train_fraction"), args.seed))

    out = Path(args.out) / f"ingest_{_fingerprint(_section_tokens(cfg, 'data'), args.seed, source_tag)}"
    out.mkdir(parents=True, exist_ok=True)
    matrix.save_tsv(out / "full.tsv")
    train.save_tsv(out / "train.tsv")
    test.save_tsv(out / "test.tsv")
    (out / "meta.txt").write_text(
        f"n_users {matrix.n_users}\nn_items {matrix.n_items}\n"
        f"n_interactions {matrix.n_interactions}\n"
        f"sparsity {100.0 * matrix.sparsity:.6f}\nr_max {matrix.r_max:.9g}\n",
        encoding="utf-8")
    print(out)
    return 0


def cmd_embed(args) -> int:
    cfg = load_config(args.config)
    train = _load_train(args.data)
    w = cfg["walk"]
    e = cfg["embed"]
    graph = build_hypergraph(train, w.getint("l_order"))
    corpus = random_walk(graph, WalkConfig(w.getint("repetition"), w.getint("depth"),
                                           w.getint("l_order"), args.seed))
    vectors, _ = train_embedding(corpus, EmbedConfig(
        e.getint("dim"), e.getint("window"), e.getint("negatives"), e.getint("epochs"),
        e.getfloat("learning_rate"), e.getfloat("min_learning_rate"), args.seed))

    fp = _fingerprint(_section_tokens(cfg, "walk"), _section_tokens(cfg, "embed"),
                      args.seed, _hash_file(Path(args.data) / "train.tsv"))
    out = Path(args.out) / f"embed_{fp}"
    out.mkdir(parents=True, exist_ok=True)
    save_embedding(out / "embedding.bin", vectors)
    print(out)
    return 0


def cmd_group(args) -> int:
    cfg = load_config(args.config)
    c = cfg["cluster"]
    train = _load_train(args.data)
    if args.n_groups:
        cfg["cluster"]["n_groups"] = str(args.n_groups)
    if args.source:
        cfg["cluster"]["source"] = args.source
    source = c["source"]
    if source == "collab_embedding":
        if not args.embedding:
            raise FileNotFoundError("source=collab_embedding needs --embedding; run `erasecf embed` first")
        points = load_embedding(_require(Path(args.embedding) / "embedding.bin", "embed"))
        points_tag = _hash_file(Path(args.embedding) / "embedding.bin")
    else:
        points = _dense_rows(train)
        points_tag = _hash_file(Path(args.data) / "train.tsv")
        if args.embedding:  # random grouping can still order groups by embedding cohesion
            points = load_embedding(_require(Path(args.embedding) / "embedding.bin", "embed"))
            points_tag = _hash_file(Path(args.embedding) / "embedding.bin")

    plan = make_plan(points, ClusterConfig(cfg["cluster"].getint("n_groups"),
                                           c.getint("max_iter"), args.seed, source))
    out = Path(args.out) / f"group_{_fingerprint(_section_tokens(cfg, 'cluster'), args.seed, points_tag)}"
    out.mkdir(parents=True, exist_ok=True)
    plan.save(out / "plan.txt")
    (out / "meta.txt").write_text(f"source {source}\nn_iter {plan.n_iter}\n", encoding="utf-8")
    print(out)
    return 0


def _dense_rows(matrix: InteractionMatrix) -> np.ndarray:
    rows = np.zeros((matrix.n_users, matrix.n_items))
    rows[matrix.flat_users(), matrix.item_idx] = matrix.ratings
    return rows


def _train_config(cfg, seed) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(t.getint("total_epochs"), t.getint("batch_size"),
                       t.getint("negatives_per_positive"), t.getfloat("learning_rate"),
                       seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train = _load_train(args.data)
    plan = GroupPlan.load(_require(Path(args.plan) / "plan.txt", "group"))
    config = _train_config(cfg, args.seed)
    fp = _fingerprint(_section_tokens(cfg, "train"), args.seed,
                      _hash_file(Path(args.data) / "train.tsv"),
                      _hash_file(Path(args.plan) / "plan.txt"))
    out = Path(args.out) / f"chain_{fp}"
    learn(train, plan, config, cfg["train"]["model_kind"], out, cfg["train"]["order"])
    train.save_tsv(out / "train.tsv")
    print(out)
    return 0


def cmd_unlearn(args) -> int:
    cfg = load_config(args.config)
    chain_dir = Path(args.chain)
    chain = load_chain(chain_dir)
    train = InteractionMatrix.load_tsv(_require(chain_dir / "train.tsv", "train"))
    u = cfg["unlearn"]
    if args.users:
        request = UnlearnRequest(np.array([int(x) for x in args.users.split(",")], dtype=np.int64))
        req_tag = f"explicit:{args.users}"
        kind, k_percent = "explicit", 0.0
    else:
        kind, k_percent = u["kind"], u.getfloat("k_percent")
        request = generate_request(train, RequestGenerator(kind, k_percent, args.seed))
        req_tag = f"{kind}@{k_percent}"
    fp = _fingerprint("unlearn", req_tag, args.seed, _hash_file(chain_dir / "chain.txt"),
                      _hash_file(chain_dir / "train.tsv"))
    out = Path(args.out) / f"chain_{fp}"
    new_chain, edited = unlearn(chain, train, request, out)
    edited.save_tsv(out / "train.tsv")
    (out / "request.txt").write_text(
        f"kind {kind}\nk_percent {k_percent:.9g}\n"
        "users " + " ".join(str(int(x)) for x in request.user_ids) + "\n",
        encoding="utf-8")
    print(out)
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    e = cfg["eval"]
    chain_dir = Path(args.chain)
    chain = load_chain(chain_dir)
    train = InteractionMatrix.load_tsv(_require(chain_dir / "train.tsv", "train"))
    test = InteractionMatrix.load_tsv(_require(Path(args.data) / "test.tsv", "ingest"))
    test = test.restrict_users(train.active_users())  # erased users are not served
    params, _ = chain.final_params()
    served = served_params(params, train)
    result = ndcg_hr_at_10(served, train, test,
                           RankEvalConfig(e.getint("cutoff"), e.getint("negatives_per_test"), args.seed))

    kind, k_percent = "none", 0.0
    req_file = chain_dir / "request.txt"
    if req_file.exists():
        meta = dict(line.split(" ", 1) for line in req_file.read_text(encoding="utf-8").splitlines() if line)
        kind, k_percent = meta["kind"], float(meta["k_percent"])
    fp = _fingerprint(_section_tokens(cfg, "eval"), args.seed,
                      _hash_file(chain_dir / "chain.txt"), _hash_file(Path(args.data) / "test.tsv"))
    out = Path(args.out) / f"eval_{fp}"
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.csv", [{
        "method": args.label, "model": chain.model_kind, "S": chain.plan.n_groups,
        "request_kind": kind, "K": f"{k_percent:.9g}", "ndcg10": result.ndcg,
        "hr10": result.hr, "seconds": 0.0, "seed": args.seed,
    }])
    print(out)
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out) / f"bench_{_fingerprint(_section_tokens(cfg, 'bench'), args.seed)}"
    out.mkdir(parents=True, exist_ok=True)
    rows = bench_mod.run_bench(cfg, args.seed, args.threads, out)
    write_report(out / "report.csv", rows)
    print(out)
    return 0


# -- entry point -------------------------------------------------------------

def _add_common(p, *, config=True):
    if config:
        p.add_argument("--config", default=None, help="INI config file; defaults cover every key")
    p.add_argument("--out", default="runs", help="artifact root directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for shard training")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="erasecf",
                                 description="Erasable collaborative filtering pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load or synthesize ratings, filter, split")
    _add_common(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("embed", help="hypergraph walks + skip-gram user embedding")
    _add_common(p)
    p.add_argument("--data", required=True, help="ingest artifact directory")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("group", help="balanced grouping + curriculum order")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--embedding", default=None, help="embed artifact directory")
    p.add_argument("--n-groups", type=int, default=0, help="override [cluster] n_groups")
    p.add_argument("--source", default=None,
                   choices=["collab_embedding", "raw_ratings", "random"],
                   help="override [cluster] source")
    p.set_defaults(fn=cmd_group)

    p = sub.add_parser("train", help="sequential grouped training with checkpoints")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--plan", required=True, help="group artifact directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("unlearn", help="erase users via rollback + suffix retrain")
    _add_common(p)
    p.add_argument("--chain", required=True, help="chain artifact directory")
    p.add_argument("--users", default=None, help="explicit comma-separated user ids")
    p.set_defaults(fn=cmd_unlearn)

    p = sub.add_parser("eval", help="NDCG@10 / HR@10 of a chain's served model")
    _add_common(p)
    p.add_argument("--data", required=True, help="ingest artifact directory (test split)")
    p.add_argument("--chain", required=True)
    p.add_argument("--label", default="laser", help="method column for the report")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="desk-scale method grid, CSV report")
    _add_common(p)
    p.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, EmptyDatasetError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
