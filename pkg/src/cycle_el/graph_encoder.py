"""Attention-based neighbor aggregation and the shared projection head.

For node i with sampled neighbor set S: the attention logit for neighbor j is
LeakyReLU(a . [x_i || x_j]), softmax-normalized over S; the node embedding is
ELU of the attention-weighted sum of neighbor features.  Both graphs (relation
and feature) run through the same machinery and share one projection MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .store import SnapshotGraph

LEAKY_SLOPE = 0.2


class GraphEncoderError(ValueError):
    pass


@dataclass
class SamplerConfig:
    threshold: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.threshold < 1:
            raise GraphEncoderError("sampler threshold must be >= 1")


def sample_neighbors(graph: SnapshotGraph, node: int, cfg: SamplerConfig,
                     epoch: int) -> np.ndarray:
    """All neighbors when degree <= threshold, else a seeded uniform subsample.

    The sample is a deterministic function of (seed, epoch, node).
    """
    neigh = graph.neighbors(node)
    if neigh.size <= cfg.threshold:
        return neigh.copy()
    rng = np.random.default_rng([cfg.seed, epoch, node])
    return np.sort(rng.choice(neigh, size=cfg.threshold, replace=False))


def graph_params(store: ad.ParameterStore, feat_dim: int, hidden_dim: int,
                 proj_dim: int, rng: np.random.Generator):
    store.add("graph.a", (2 * feat_dim,), rng)
    store.add("proj.W1", (feat_dim, hidden_dim), rng)
    store.add("proj.b1", (hidden_dim,), rng, init="zeros")
    store.add("proj.W2", (hidden_dim, proj_dim), rng)
    store.add("proj.b2", (proj_dim,), rng, init="zeros")


def pad_neighbor_lists(neighbor_lists: list[np.ndarray]) -> np.ndarray:
    """Stack variable-length neighbor id lists into a -1 padded int matrix."""
    width = max((len(x) for x in neighbor_lists), default=0)
    width = max(width, 1)
    out = np.full((len(neighbor_lists), width), -1, dtype=np.int64)
    for i, lst in enumerate(neighbor_lists):
        out[i, : len(lst)] = lst
    return out


def attention_weights(node_ids: np.ndarray, neigh_idx: np.ndarray,
                      features: ad.Tensor, store: ad.ParameterStore) -> ad.Tensor:
    """Masked softmax attention over padded neighbor lists.

    Rows with no neighbors get all-zero weights (the isolated-node rule).
    """
    feat_dim = features.shape[1]
    a_self = ad.slice1d(store["graph.a"], 0, feat_dim)
    a_neigh = ad.slice1d(store["graph.a"], feat_dim, 2 * feat_dim)
    mask = (neigh_idx >= 0).astype(np.float64)
    proj_self = ad.matmul(features, ad.reshape(a_self, (-1, 1)))    # (n, 1)
    proj_neigh = ad.matmul(features, ad.reshape(a_neigh, (-1, 1)))  # (n, 1)
    si = ad.reshape(ad.gather_rows(proj_self, node_ids), (-1, 1))
    sj = ad.reshape(ad.gather_rows(proj_neigh, np.maximum(neigh_idx, 0).ravel()),
                    neigh_idx.shape)
    logits = ad.leaky_relu(ad.add(si, sj), LEAKY_SLOPE)
    # stable masked softmax; fully masked rows fall out as all-zero
    shifted_in = np.where(mask > 0, logits.values, -np.inf)
    row_max = np.max(shifted_in, axis=1, initial=-np.inf)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    expo = ad.mul(ad.exp(ad.sub(ad.mul(logits, ad.constant(mask)),
                                ad.constant(row_max[:, None]))),
                  ad.constant(mask))
    denom = ad.sum_(expo, axis=1, keepdims=True)
    # fully masked rows have denom 0; bump to 1 so the division stays defined
    denom_safe = ad.add(denom, ad.constant((denom.values == 0).astype(np.float64)))
    return ad.mul(expo, ad.exp(ad.neg(ad.log(denom_safe))))


def attend_aggregate(node_ids: np.ndarray, neighbor_lists: list[np.ndarray],
                     features: ad.Tensor, store: ad.ParameterStore) -> ad.Tensor:
    """z_i = ELU(sum_j alpha_ij x_j) for a batch of nodes; isolated nodes give
    ELU(0) = 0 rows."""
    neigh_idx = pad_neighbor_lists(neighbor_lists)
    alpha = attention_weights(node_ids, neigh_idx, features, store)
    summed = ad.neighbor_weighted_sum(alpha, features, neigh_idx)
    return ad.elu(summed)


def project(z: ad.Tensor, store: ad.ParameterStore) -> ad.Tensor:
    """Shared single-hidden-layer MLP: W2 ELU(W1 z + b1) + b2."""
    w1 = store["proj.W1"]
    if z.shape[-1] != w1.shape[0]:
        raise GraphEncoderError(f"projection input dim {z.shape[-1]} != {w1.shape[0]}")
    hidden = ad.elu(ad.add(ad.matmul(z, w1), ad.reshape(store["proj.b1"], (1, -1))))
    return ad.add(ad.matmul(hidden, store["proj.W2"]), ad.reshape(store["proj.b2"], (1, -1)))


def encode_nodes(graph: SnapshotGraph, node_ids: np.ndarray, features: ad.Tensor,
                 store: ad.ParameterStore, sampler: SamplerConfig | None,
                 epoch: int = 0) -> ad.Tensor:
    """Aggregate then project a batch of nodes from one graph.

    ``sampler=None`` aggregates full neighborhoods (deterministic; used at
    evaluation time).
    """
    if sampler is None:
        lists = [graph.neighbors(int(i)) for i in node_ids]
    else:
        lists = [sample_neighbors(graph, int(i), sampler, epoch) for i in node_ids]
    z = attend_aggregate(np.asarray(node_ids, dtype=np.int64), lists, features, store)
    return project(z, store)
