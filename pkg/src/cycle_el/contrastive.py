"""Cross-year, cross-graph InfoNCE losses and the combined objective.

The anchor embedding comes from one graph and its positive/negative pool
members from the other; similarities are cosine, temperature-scaled, and the
per-node loss is -log(sum_pos / sum_pool) computed with shifted log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dataset import SamplePools


class ContrastiveError(ValueError):
    pass


@dataclass
class ContrastiveConfig:
    temperature: float = 0.5
    max_positives: int = 10  # per node per epoch, sampler-threshold semantics

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContrastiveError("temperature must be positive")


@dataclass
class LossReport:
    loss_el: float
    loss_f: float
    loss_r: float
    total: float
    weight_a: float
    weight_b: float
    weight_c: float

    def as_dict(self) -> dict:
        return {"L_e": self.loss_el, "L_f": self.loss_f, "L_r": self.loss_r,
                "L": self.total, "a": self.weight_a, "b": self.weight_b,
                "c": self.weight_c}


def subsample_pool(pool: np.ndarray, cap: int, seed: int, epoch: int, node: int) -> np.ndarray:
    """Seeded uniform subsample when the pool exceeds the cap, else the full pool."""
    if pool.size <= cap:
        return pool
    rng = np.random.default_rng([seed, epoch, node])
    return np.sort(rng.choice(pool, size=cap, replace=False))


def batched_contrastive_loss(anchors: ad.Tensor, others: ad.Tensor,
                             pos_lists: list[np.ndarray], neg_lists: list[np.ndarray],
                             tau: float) -> tuple[ad.Tensor, int]:
    """Mean InfoNCE over anchor rows; every row must have a non-empty positive
    list (callers drop empty-positive nodes first).

    Returns (loss, zero_norm_count) where the count flags embeddings whose
    cosine similarity was pinned to 0 by the zero-row rule.
    """
    if tau <= 0:
        raise ContrastiveError("temperature must be positive")
    batch = len(pos_lists)
    if batch == 0:
        return ad.constant(0.0), 0
    if any(p.size == 0 for p in pos_lists):
        raise ContrastiveError("empty positive list reached the batched loss")
    u = ad.l2_normalize_rows(anchors)
    v = ad.l2_normalize_rows(others)
    zero_norms = int(np.sum(np.linalg.norm(anchors.values, axis=1) == 0))
    zero_norms += int(np.sum(np.linalg.norm(others.values, axis=1) == 0))

    width = max(p.size + n.size for p, n in zip(pos_lists, neg_lists))
    member = np.zeros((batch, width), dtype=np.int64)
    mask_all = np.zeros((batch, width))
    mask_pos = np.zeros((batch, width))
    for b, (pos, negv) in enumerate(zip(pos_lists, neg_lists)):
        ids = np.concatenate([pos, negv])
        member[b, : ids.size] = ids
        mask_all[b, : ids.size] = 1.0
        mask_pos[b, : pos.size] = 1.0

    anchor_rep = np.repeat(np.arange(batch), width)
    gathered_u = ad.gather_rows(u, anchor_rep)
    gathered_v = ad.gather_rows(v, member.ravel())
    sims = ad.reshape(ad.sum_(ad.mul(gathered_u, gathered_v), axis=1), (batch, width))
    scaled = ad.mul(sims, ad.constant(1.0 / tau))
    lse_all = ad.logsumexp_rows(scaled, mask_all)
    lse_pos = ad.logsumexp_rows(scaled, mask_pos)
    return ad.mean_(ad.sub(lse_all, lse_pos)), zero_norms


def _single_node_loss(anchor_vec, other_embeddings, pos: np.ndarray, neg: np.ndarray,
                      tau: float) -> float:
    anchor = anchor_vec if isinstance(anchor_vec, ad.Tensor) else ad.constant(anchor_vec)
    others = other_embeddings if isinstance(other_embeddings, ad.Tensor) \
        else ad.constant(other_embeddings)
    if pos.size == 0:
        return 0.0
    loss, _ = batched_contrastive_loss(ad.reshape(anchor, (1, -1)), others,
                                       [pos], [neg], tau)
    return float(loss.values)


def loss_f(node: int, z_fp_i, relation_projected, pools: SamplePools, tau: float) -> float:
    """Feature-side anchor against relation-graph pool members (cross-year pools)."""
    if pools.graph_kind != "relation":
        raise ContrastiveError("loss_f needs relation-graph pools")
    return _single_node_loss(z_fp_i, relation_projected,
                             pools.positives[node], pools.negatives[node], tau)


def loss_r(node: int, z_rp_i, feature_projected, pools: SamplePools, tau: float) -> float:
    """Relation-side anchor against feature-graph pool members."""
    if pools.graph_kind != "feature":
        raise ContrastiveError("loss_r needs feature-graph pools")
    return _single_node_loss(z_rp_i, feature_projected,
                             pools.positives[node], pools.negatives[node], tau)


def combine(l_e: float, l_f: float, l_r: float, a: float, b: float, c: float) -> LossReport:
    """Weighted sum of the three loss components."""
    weights = (a, b, c)
    if any(not np.isfinite(w) or w < 0 for w in weights):
        raise ContrastiveError("loss weights must be finite and non-negative")
    if all(w == 0 for w in weights):
        raise ContrastiveError("degenerate objective: all loss weights are zero")
    total = a * l_e + b * l_f + c * l_r
    return LossReport(loss_el=l_e, loss_f=l_f, loss_r=l_r, total=total,
                      weight_a=a, weight_b=b, weight_c=c)
