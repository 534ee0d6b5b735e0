"""Sequential grouped training, checkpoint chains, and rollback unlearning.

learn() walks the groups in curriculum order, trains each phase with its own
RNG stream keyed by (seed, position, epoch), and checkpoints model+optimizer
after every phase. unlearn() drops the requested users' rows, restores the
last checkpoint before the earliest affected phase, and retrains only the
suffix with exactly the streams a from-scratch run would use - which is why
the result is bit-identical to retraining on the edited data.

C-SISA trains one isolated model per group instead and stitches user rows
together (item/tower weights averaged); it unlearns by retraining one shard.
"""

import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._streams import STREAM_REQUEST, STREAM_TRAIN, substream
from .grouping import GroupPlan
from .ingest import InteractionMatrix
from .models import (ModelParams, OptimizerState, TrainConfig, init_params,
                     load_params, save_params, train_epoch)

ORDERS = ("seqtrain", "anti_seqtrain")
REQUEST_KINDS = ("rand_at_K", "top_at_K")


@dataclass(frozen=True)
class UnlearnRequest:
    user_ids: np.ndarray

    def __post_init__(self):
        ids = np.unique(np.asarray(self.user_ids, dtype=np.int64))
        if len(ids) == 0:
            raise ValueError("unlearn request must name at least one user")
        if len(ids) != len(self.user_ids):
            raise ValueError("unlearn request has duplicate user ids")
        if ids.min() < 0:
            raise ValueError("negative user id in unlearn request")
        object.__setattr__(self, "user_ids", ids)


@dataclass(frozen=True)
class RequestGenerator:
    kind: str
    k_percent: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REQUEST_KINDS:
            raise ValueError(f"kind must be one of {REQUEST_KINDS}, got {self.kind!r}")
        if not 0.0 < self.k_percent < 100.0:
            raise ValueError("k_percent must be in (0, 100)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class CheckpointChain:
    plan: GroupPlan
    model_kind: str
    seed: int
    order: str
    config: TrainConfig
    directory: Path
    initial_checkpoint: str
    checkpoints: list
    erased_users: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def epochs_per_group(self) -> int:
        return self.config.total_epochs

    def visit_order(self) -> np.ndarray:
        order = self.plan.train_order
        return order[::-1] if self.order == "anti_seqtrain" else order

    def checkpoint_path(self, position: int) -> Path:
        if position < 0:
            return self.directory / self.initial_checkpoint
        return self.directory / self.checkpoints[position]

    def final_params(self) -> tuple[ModelParams, OptimizerState]:
        params, opt, _ = load_params(self.checkpoint_path(len(self.checkpoints) - 1))
        return params, opt


def _manifest_path(directory: Path) -> Path:
    return Path(directory) / "chain.txt"


def save_chain(chain: CheckpointChain) -> Path:
    path = _manifest_path(chain.directory)
    lines = [
        f"model_kind {chain.model_kind}",
        f"seed {chain.seed}",
        f"order {chain.order}",
        f"n_groups {chain.plan.n_groups}",
        f"epochs_per_group {chain.config.total_epochs}",
        f"batch_size {chain.config.batch_size}",
        f"negatives_per_positive {chain.config.negatives_per_positive}",
        f"learning_rate {chain.config.learning_rate:.9g}",
        "plan plan.txt",
        f"initial {chain.initial_checkpoint}",
    ]
    lines += [f"checkpoint {k} {name}" for k, name in enumerate(chain.checkpoints)]
    lines.append("erased " + " ".join(str(int(u)) for u in chain.erased_users))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_chain(directory) -> CheckpointChain:
    directory = Path(directory)
    path = _manifest_path(directory)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no chain manifest; run learning first")
    fields = {}
    checkpoints = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "checkpoint":
            k, _, name = rest.partition(" ")
            checkpoints[int(k)] = name
        else:
            fields[key] = rest
    plan = GroupPlan.load(directory / fields["plan"])
    config = TrainConfig(total_epochs=int(fields["epochs_per_group"]),
                         batch_size=int(fields["batch_size"]),
                         negatives_per_positive=int(fields["negatives_per_positive"]),
                         learning_rate=float(fields["learning_rate"]),
                         seed=int(fields["seed"]))
    erased = np.array([int(x) for x in fields.get("erased", "").split()], dtype=np.int64)
    return CheckpointChain(plan, fields["model_kind"], int(fields["seed"]), fields["order"],
                           config, directory, fields["initial"],
                           [checkpoints[k] for k in sorted(checkpoints)], erased)


def _group_data(train: InteractionMatrix, plan: GroupPlan, g: int) -> InteractionMatrix:
    return train.restrict_users(plan.group_members(g))


def _check_plan(train: InteractionMatrix, plan: GroupPlan) -> None:
    if len(plan.labels) != train.n_users:
        raise ValueError(f"plan covers {len(plan.labels)} users, matrix has {train.n_users}")
    sizes = plan.sizes()
    empty = np.nonzero(sizes == 0)[0]
    if len(empty):
        raise ValueError(f"group {empty[0]} has no members")


def learn(train: InteractionMatrix, plan: GroupPlan, config: TrainConfig,
          model_kind: str, workdir, order: str = "seqtrain") -> CheckpointChain:
    """Train groups sequentially in curriculum order with per-phase checkpoints."""
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}, got {order!r}")
    _check_plan(train, plan)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    plan.save(workdir / "plan.txt")

    s = plan.n_groups
    chain = CheckpointChain(plan, model_kind, config.seed, order, config, workdir,
                            "chk_init.bin", [f"chk_{k:03d}.bin" for k in range(s)])
    visit = chain.visit_order()

    params = init_params(train.n_users, train.n_items, model_kind, config.seed)
    opt = OptimizerState.for_params(params, config.learning_rate)
    save_params(chain.checkpoint_path(-1), params, opt, t_done=0, seed=config.seed)

    for pos, g in enumerate(visit):
        sub = _group_data(train, plan, int(g))
        if sub.n_interactions == 0:
            raise ValueError(f"group {g} has no training data")
        for epoch in range(config.total_epochs):
            rng = substream(config.seed, STREAM_TRAIN, pos, epoch)
            train_epoch(params, opt, sub, config, rng)
        save_params(chain.checkpoint_path(pos), params, opt,
                    t_done=(pos + 1) * config.total_epochs, seed=config.seed)
    save_chain(chain)
    return chain


def locate(plan: GroupPlan, request: UnlearnRequest,
           order: str = "seqtrain") -> int:
    """Earliest position in the visit order whose group holds a requested user."""
    if request.user_ids.max() >= len(plan.labels):
        raise KeyError(f"user {int(request.user_ids.max())} not in the plan")
    visit = plan.train_order[::-1] if order == "anti_seqtrain" else plan.train_order
    pos_of_group = np.empty(plan.n_groups, dtype=np.int64)
    pos_of_group[visit] = np.arange(plan.n_groups)
    return int(pos_of_group[plan.labels[request.user_ids]].min())


def unlearn(chain: CheckpointChain, train: InteractionMatrix, request: UnlearnRequest,
            workdir) -> tuple[CheckpointChain, InteractionMatrix]:
    """Erase the users and bring the chain back to from-scratch equivalence by
    retraining only the affected suffix on the edited data."""
    deg = train.degrees()
    for u in request.user_ids:
        if u >= train.n_users:
            raise KeyError(f"user {int(u)} does not exist")
        if deg[u] == 0:
            raise KeyError(f"user {int(u)} has no data (already erased?)")
    edited = train.remove_users(request.user_ids)
    p = locate(chain.plan, request, chain.order)
    visit = chain.visit_order()
    s = chain.plan.n_groups

    # every suffix group must keep data, else the plan has to be rebuilt
    for pos in range(p, s):
        if _group_data(edited, chain.plan, int(visit[pos])).n_interactions == 0:
            raise ValueError(
                f"group {int(visit[pos])} would be left empty; re-group before unlearning")

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    new_chain = CheckpointChain(chain.plan, chain.model_kind, chain.seed, chain.order,
                                chain.config, workdir, chain.initial_checkpoint,
                                list(chain.checkpoints),
                                np.union1d(chain.erased_users, request.user_ids))
    chain.plan.save(workdir / "plan.txt")
    shutil.copyfile(chain.checkpoint_path(-1), new_chain.checkpoint_path(-1))
    for pos in range(p):
        shutil.copyfile(chain.checkpoint_path(pos), new_chain.checkpoint_path(pos))

    params, opt, _ = load_params(chain.checkpoint_path(p - 1))
    for pos in range(p, s):
        sub = _group_data(edited, chain.plan, int(visit[pos]))
        for epoch in range(chain.config.total_epochs):
            rng = substream(chain.seed, STREAM_TRAIN, pos, epoch)
            train_epoch(params, opt, sub, chain.config, rng)
        save_params(new_chain.checkpoint_path(pos), params, opt,
                    t_done=(pos + 1) * chain.config.total_epochs, seed=chain.seed)
    save_chain(new_chain)
    return new_chain, edited


def retrain_baseline(train: InteractionMatrix, plan: GroupPlan, config: TrainConfig,
                     model_kind: str, workdir, order: str = "seqtrain") -> ModelParams:
    """Full from-scratch sequential run; the ground truth the oracle compares against."""
    chain = learn(train, plan, config, model_kind, workdir, order)
    params, _ = chain.final_params()
    return params


def _train_shard(args):
    sub, position, config, model_kind, n_users, n_items = args
    params = init_params(n_users, n_items, model_kind, config.seed)
    opt = OptimizerState.for_params(params, config.learning_rate)
    for epoch in range(config.total_epochs):
        rng = substream(config.seed, STREAM_TRAIN, position, epoch)
        train_epoch(params, opt, sub, config, rng)
    return params.arrays


def csisa_shards(train: InteractionMatrix, plan: GroupPlan, config: TrainConfig,
                 model_kind: str, n_workers: int = 1,
                 only_groups=None, base_shards: dict | None = None) -> dict:
    """Train one isolated model per group (or only `only_groups`), returning
    {group_id: parameter arrays}. `base_shards` supplies the untouched rest."""
    _check_plan(train, plan)
    groups = [int(g) for g in plan.train_order] if only_groups is None else [int(g) for g in only_groups]
    jobs = []
    for g in groups:
        sub = _group_data(train, plan, g)
        if sub.n_interactions == 0:
            raise ValueError(f"group {g} has no training data")
        jobs.append((sub, plan.position_of_group(g), config, model_kind,
                     train.n_users, train.n_items))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
            trained = list(pool.map(_train_shard, jobs))
    else:
        trained = [_train_shard(job) for job in jobs]
    shards = dict(base_shards) if base_shards else {}
    shards.update(zip(groups, trained))
    return shards


def merge_shards(shards: dict, plan: GroupPlan, config: TrainConfig,
                 model_kind: str, n_users: int, n_items: int) -> ModelParams:
    """User rows concatenated by group membership; everything else averaged."""
    merged = init_params(n_users, n_items, model_kind, config.seed)
    ordered = [shards[int(g)] for g in plan.train_order]
    for name in merged.names():
        if name == "alpha":
            continue
        merged.arrays[name] = np.mean([a[name] for a in ordered], axis=0)
    for g in plan.train_order:
        members = plan.group_members(int(g))
        merged.arrays["alpha"][members] = shards[int(g)]["alpha"][members]
    return merged


def csisa(train: InteractionMatrix, plan: GroupPlan, config: TrainConfig,
          model_kind: str, n_workers: int = 1) -> ModelParams:
    """Isolated per-group models; user rows concatenated by membership,
    item embeddings and tower weights averaged across shards."""
    shards = csisa_shards(train, plan, config, model_kind, n_workers)
    return merge_shards(shards, plan, config, model_kind, train.n_users, train.n_items)


def csisa_unlearn(train: InteractionMatrix, plan: GroupPlan, config: TrainConfig,
                  model_kind: str, request: UnlearnRequest, shards: dict,
                  n_workers: int = 1) -> tuple[ModelParams, InteractionMatrix, dict]:
    """Retrain only the shards holding requested users on the edited data."""
    edited = train.remove_users(request.user_ids)
    affected = np.unique(plan.labels[request.user_ids])
    for g in affected:
        if _group_data(edited, plan, int(g)).n_interactions == 0:
            raise ValueError(f"group {int(g)} would be left empty; re-group before unlearning")
    new_shards = csisa_shards(edited, plan, config, model_kind, n_workers,
                              only_groups=affected, base_shards=shards)
    merged = merge_shards(new_shards, plan, config, model_kind, train.n_users, train.n_items)
    return merged, edited, new_shards


def generate_request(matrix: InteractionMatrix, gen: RequestGenerator) -> UnlearnRequest:
    """rand: uniform sample of ceil(K% * N) active users; top: the same count
    of highest-degree users, ties by user id."""
    deg = matrix.degrees()
    active = np.nonzero(deg > 0)[0]
    n_req = int(np.ceil(gen.k_percent / 100.0 * matrix.n_users))
    if n_req > len(active):
        raise ValueError(f"request of {n_req} users exceeds {len(active)} active users")
    if gen.kind == "rand_at_K":
        rng = substream(gen.seed, STREAM_REQUEST)
        picked = rng.choice(active, size=n_req, replace=False)
    else:
        order = np.lexsort((np.arange(matrix.n_users), -deg))
        picked = order[:n_req]
    return UnlearnRequest(np.sort(picked))


def served_params(params: ModelParams, train: InteractionMatrix) -> ModelParams:
    """Serving copy with embedding rows of dataless users zeroed out."""
    out = params.copy()
    out.arrays["alpha"][train.degrees() == 0] = 0.0
    return out


def available_workers() -> int:
    return os.cpu_count() or 1
