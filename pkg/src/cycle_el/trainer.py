"""Joint training of the combined objective with checkpointing.

Schedule: every mention batch takes one optimizer step on a * L_e; at the end
of each epoch one step runs on b * L_f + c * L_r over a capped, seeded node
sample with freshly resampled neighbors.  All randomness derives from
(seed, epoch[, node]) tuples so save/resume replays bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import contrastive as cl
from . import graph_encoder as ge
from . import text_encoder as te
from .dataset import FeatureMatrix, SamplePools
from .model import CycleModel, ModelDims
from .store import MentionRecord, SnapshotGraph, TemporalKG

CHECKPOINT_VERSION = 1


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 16
    lr: float = 1e-5
    weight_a: float = 1.0
    weight_b: float = 1.0
    weight_c: float = 1.0
    temperature: float = 0.5
    sampler_threshold: int = 10
    max_positives: int = 10
    node_cap: int = 512
    seed: int = 0
    train_year: int = 0
    target_year: int = 0
    text_dim: int = 64
    hidden_dim: int = 64
    proj_dim: int = 32
    optimizer: str = "adam"
    fusion_decay: float = 0.0
    dataset_hash: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.batch_size < 2:
            raise TrainerError("batch size must be >= 2 (in-batch negatives)")

    def as_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class TrainAssets:
    """Everything train() needs besides the raw mention list."""

    kg: TemporalKG
    feature_matrix: FeatureMatrix
    feature_graph: SnapshotGraph
    relation_pools: SamplePools  # train_year -> target_year diff
    feature_pools: SamplePools
    vocab: te.Vocabulary


@dataclass
class Checkpoint:
    params_state: dict
    adam_m: dict
    adam_v: dict
    adam_step: int
    epoch: int
    config: TrainConfig
    dims: ModelDims
    use_graph: bool

    def save(self, path: str | Path):
        meta = {
            "config": self.config.as_dict(),
            "config_hash": self.config.config_hash(),
            "dims": self.dims.as_dict(),
            "epoch": self.epoch,
            "adam_step": self.adam_step,
            "use_graph": self.use_graph,
            "rng": {"seed": self.config.seed, "next_epoch": self.epoch},
        }
        tensors = dict(self.params_state)
        tensors.update({f"adam.m.{k}": v for k, v in self.adam_m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in self.adam_v.items()})
        blob = json.dumps(meta, sort_keys=True).encode()
        with Path(path).open("wb") as fh:
            fh.write(struct.pack("<B", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            ad.write_tensors(fh, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with Path(path).open("rb") as fh:
            raw = fh.read(1)
            if len(raw) != 1:
                raise TrainerError(f"{path}: empty checkpoint file")
            version = struct.unpack("<B", raw)[0]
            if version != CHECKPOINT_VERSION:
                raise TrainerError(f"{path}: unsupported checkpoint version {version}")
            (meta_len,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(meta_len))
            tensors = ad.read_tensors(fh)
        params_state, adam_m, adam_v = {}, {}, {}
        for name, arr in tensors.items():
            if name.startswith("adam.m."):
                adam_m[name[len("adam.m."):]] = arr
            elif name.startswith("adam.v."):
                adam_v[name[len("adam.v."):]] = arr
            else:
                params_state[name] = arr
        cfg = TrainConfig(**meta["config"])
        dims = ModelDims(**meta["dims"])
        return cls(params_state=params_state, adam_m=adam_m, adam_v=adam_v,
                   adam_step=meta["adam_step"], epoch=meta["epoch"], config=cfg,
                   dims=dims, use_graph=meta["use_graph"])

    def build_model(self, feature_matrix: FeatureMatrix) -> CycleModel:
        model = CycleModel(self.dims, self.use_graph, self.config.seed, feature_matrix)
        model.params.load_state_dict(self.params_state)
        return model


def _mention_batches(mentions, epoch: int, seed: int, batch_size: int):
    order = np.random.default_rng([seed, epoch]).permutation(len(mentions))
    for start in range(0, len(order), batch_size):
        chunk = order[start: start + batch_size]
        if chunk.size >= 2:
            yield [mentions[int(i)] for i in chunk]


def _text_step(model: CycleModel, batch: list[MentionRecord], assets: TrainAssets,
               cfg: TrainConfig, optimizer_state, epoch: int, train_graph: SnapshotGraph):
    vocab = assets.vocab
    mention_seqs = [te.build_mention_seq(m, vocab) for m in batch]
    gold_ids = np.array([assets.kg.registry.by_qid(m.gold_qid).internal_id for m in batch])
    entity_seqs = [te.build_entity_seq(assets.kg.registry.by_id(int(i)), vocab)
                   for i in gold_ids]
    sampler = ge.SamplerConfig(threshold=cfg.sampler_threshold, seed=cfg.seed)

    def loss_fn():
        y_m = model.encode_mentions(mention_seqs)
        y_e = model.entity_vectors(entity_seqs, gold_ids, train_graph,
                                   assets.feature_graph, sampler, epoch)
        scores = ad.matmul(y_m, ad.transpose(y_e))
        return ad.mul(te.loss_el(scores), ad.constant(cfg.weight_a))

    loss, grads = ad.forward_backward(loss_fn, model.params)
    _apply_step(model, grads, cfg, optimizer_state)
    return loss / cfg.weight_a if cfg.weight_a else 0.0


def graph_loss_nodes(pools: SamplePools, cap: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded capped sample of nodes with a non-empty positive pool."""
    candidates = np.array([i for i, p in enumerate(pools.positives) if p.size > 0],
                          dtype=np.int64)
    if candidates.size <= cap:
        return candidates
    rng = np.random.default_rng([seed, epoch, 0x6E])
    return np.sort(rng.choice(candidates, size=cap, replace=False))


def _graph_losses(model: CycleModel, assets: TrainAssets, cfg: TrainConfig,
                  epoch: int, train_graph: SnapshotGraph):
    """b*L_f + c*L_r over capped node samples; returns (tensor, l_f, l_r)."""
    sampler = ge.SamplerConfig(threshold=cfg.sampler_threshold, seed=cfg.seed)
    terms = []
    values = {}
    for name, weight, pools, anchor_graph, other_graph in (
        ("f", cfg.weight_b, assets.relation_pools, assets.feature_graph, train_graph),
        ("r", cfg.weight_c, assets.feature_pools, train_graph, assets.feature_graph),
    ):
        nodes = graph_loss_nodes(pools, cfg.node_cap, cfg.seed, epoch)
        if nodes.size == 0:
            values[name] = 0.0
            continue
        pos_lists, neg_lists, member_union = [], [], set()
        for node in nodes:
            pos = cl.subsample_pool(pools.positives[node], cfg.max_positives,
                                    cfg.seed, epoch, int(node))
            neg = pools.negatives[node]
            pos_lists.append(pos)
            neg_lists.append(neg)
            member_union.update(int(x) for x in pos)
            member_union.update(int(x) for x in neg)
        members = np.array(sorted(member_union), dtype=np.int64)
        anchors = model.graph_embeddings(anchor_graph, nodes, sampler, epoch)
        others = model.graph_embeddings(other_graph, members, sampler, epoch)
        remap = [np.searchsorted(members, p) for p in pos_lists], \
                [np.searchsorted(members, n) for n in neg_lists]
        loss, _ = cl.batched_contrastive_loss(anchors, others, remap[0], remap[1],
                                              cfg.temperature)
        values[name] = float(loss.values)
        if weight > 0:
            terms.append(ad.mul(loss, ad.constant(weight)))
    if not terms:
        return None, values.get("f", 0.0), values.get("r", 0.0)
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total, values.get("f", 0.0), values.get("r", 0.0)


def _apply_step(model: CycleModel, grads: dict, cfg: TrainConfig, optimizer_state):
    if cfg.fusion_decay > 0.0 and "fuse.W" in grads:
        # keeps the graph-to-score coupling from memorizing snapshot-specific
        # detail; zero reproduces the plain objective
        grads["fuse.W"] = grads["fuse.W"] + cfg.fusion_decay * model.params["fuse.W"].values
    if cfg.optimizer == "adam":
        ad.adam_step(model.params, grads, cfg.lr, optimizer_state)
    else:
        ad.sgd_step(model.params, grads, cfg.lr)


def train(assets: TrainAssets, mentions: list[MentionRecord], cfg: TrainConfig,
          start_checkpoint: Checkpoint | None = None):
    """Run the configured number of epochs; returns (Checkpoint, LossReport list)."""
    train_split = [m for m in mentions if m.year == cfg.train_year]
    if not train_split:
        raise TrainerError(f"no training mentions for year {cfg.train_year}")
    use_graph = cfg.weight_b > 0 or cfg.weight_c > 0
    dims = ModelDims(vocab_size=len(assets.vocab), feat_dim=assets.feature_matrix.m,
                     text_dim=cfg.text_dim, hidden_dim=cfg.hidden_dim,
                     proj_dim=cfg.proj_dim)
    train_graph = assets.kg.snapshots[cfg.train_year]

    if start_checkpoint is not None:
        if start_checkpoint.config.config_hash() != cfg.config_hash():
            import warnings

            warnings.warn("resuming with a different config hash", stacklevel=2)
        model = start_checkpoint.build_model(assets.feature_matrix)
        state = ad.AdamState(m={k: v.copy() for k, v in start_checkpoint.adam_m.items()},
                             v={k: v.copy() for k, v in start_checkpoint.adam_v.items()},
                             step=start_checkpoint.adam_step)
        first_epoch = start_checkpoint.epoch
    else:
        model = CycleModel(dims, use_graph, cfg.seed, assets.feature_matrix)
        state = ad.AdamState.fresh(model.params)
        first_epoch = 0

    reports: list[cl.LossReport] = []
    for epoch in range(first_epoch, cfg.epochs):
        el_losses = []
        for batch in _mention_batches(train_split, epoch, cfg.seed, cfg.batch_size):
            try:
                el_losses.append(_text_step(model, batch, assets, cfg, state, epoch,
                                            train_graph))
            except ad.AutodiffError as exc:
                raise TrainerError(f"epoch {epoch}, batch {len(el_losses)}: {exc}") from exc
        l_f = l_r = 0.0
        if use_graph:
            total, l_f, l_r = _graph_losses(model, assets, cfg, epoch, train_graph)
            if total is not None:
                model.params.zero_grads()
                ad.backward(total)
                _apply_step(model, model.params.grads(), cfg, state)
        mean_el = float(np.mean(el_losses)) if el_losses else 0.0
        reports.append(cl.combine(mean_el, l_f, l_r, cfg.weight_a, cfg.weight_b,
                                  cfg.weight_c))

    ckpt = Checkpoint(params_state=model.params.state_dict(),
                      adam_m={k: v.copy() for k, v in state.m.items()},
                      adam_v={k: v.copy() for k, v in state.v.items()},
                      adam_step=state.step, epoch=cfg.epochs, config=cfg,
                      dims=dims, use_graph=use_graph)
    return ckpt, reports


def write_training_log(path: str | Path, reports: list[cl.LossReport]):
    with Path(path).open("w") as fh:
        for epoch, rep in enumerate(reports):
            fh.write(json.dumps({"epoch": epoch, **rep.as_dict()}, sort_keys=True) + "\n")
