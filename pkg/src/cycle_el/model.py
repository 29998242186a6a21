"""Full model assembly: two text towers, the graph encoder, and the fusion
of projected graph embeddings into the entity-side scoring vector.

With graph fusion enabled, the entity vector is
``y_e = text_tower(entity) + [z_rp || z_fp] @ W_fuse`` so current-graph
structure reaches the dot-product score.  The text-only ablation (loss weights
b = c = 0) disables the fusion term entirely and trains a plain bi-encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import graph_encoder as ge
from . import text_encoder as te
from .dataset import FeatureMatrix
from .store import SnapshotGraph


@dataclass
class ModelDims:
    vocab_size: int
    feat_dim: int
    text_dim: int = 64
    hidden_dim: int = 64
    proj_dim: int = 32

    def as_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "feat_dim": self.feat_dim,
                "text_dim": self.text_dim, "hidden_dim": self.hidden_dim,
                "proj_dim": self.proj_dim}


class CycleModel:
    """Parameter container plus the forward paths used by training and eval."""

    def __init__(self, dims: ModelDims, use_graph: bool, seed: int,
                 feature_matrix: FeatureMatrix, train_features: bool = False):
        self.dims = dims
        self.use_graph = use_graph
        self.params = ad.ParameterStore()
        rng = np.random.default_rng([seed, 0xC1])
        te.encoder_params(self.params, "mention", dims.vocab_size, dims.text_dim, rng)
        te.encoder_params(self.params, "entity", dims.vocab_size, dims.text_dim, rng)
        ge.graph_params(self.params, dims.feat_dim, dims.hidden_dim, dims.proj_dim, rng)
        # zero init: the graph contribution to scores starts as a no-op and
        # only grows where the linking loss asks for it
        self.params.add("fuse.W", (2 * dims.proj_dim, dims.text_dim), rng,
                        init="zeros")
        self.features = ad.Tensor(feature_matrix.dense(), requires_grad=train_features,
                                  name="node_features")

    def encode_mentions(self, seqs: list[te.TokenSequence]) -> ad.Tensor:
        return te.encode_batch(seqs, self.params, "mention", self.dims.vocab_size)

    def encode_entities_text(self, seqs: list[te.TokenSequence]) -> ad.Tensor:
        return te.encode_batch(seqs, self.params, "entity", self.dims.vocab_size)

    def graph_embeddings(self, graph: SnapshotGraph, node_ids: np.ndarray,
                         sampler: ge.SamplerConfig | None, epoch: int = 0) -> ad.Tensor:
        """Projected embeddings for a batch of nodes from one graph."""
        return ge.encode_nodes(graph, node_ids, self.features, self.params, sampler, epoch)

    def entity_vectors(self, seqs: list[te.TokenSequence], node_ids: np.ndarray,
                       relation_graph: SnapshotGraph | None,
                       feature_graph: SnapshotGraph | None,
                       sampler: ge.SamplerConfig | None, epoch: int = 0) -> ad.Tensor:
        """Entity-side scoring vectors; graph term only when fusion is on."""
        y_text = self.encode_entities_text(seqs)
        if not self.use_graph:
            return y_text
        z_rp = self.graph_embeddings(relation_graph, node_ids, sampler, epoch)
        z_fp = self.graph_embeddings(feature_graph, node_ids, sampler, epoch)
        fused = ad.matmul(ad.concat([z_rp, z_fp], axis=1), self.params["fuse.W"])
        return ad.add(y_text, fused)
