"""Retrieval evaluation: recall@N tables, temporal-gap matrices, relative
boost over a baseline, and degree-bucketed improvement analysis.

Retrieval is exact brute-force dot-product over the full entity universe;
score ties break toward the lower internal id so rankings are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import text_encoder as te
from .model import CycleModel
from .store import MentionRecord, SnapshotGraph, TemporalKG
from .trainer import Checkpoint, TrainAssets

DEFAULT_N = (1, 2, 4, 8, 16, 32, 64)


class EvalError(ValueError):
    pass


@dataclass
class EvalConfig:
    n_list: tuple[int, ...] = DEFAULT_N
    direction: str = "forward_and_backward"  # or "forward_only"

    def __post_init__(self):
        if list(self.n_list) != sorted(set(self.n_list)) or any(n <= 0 for n in self.n_list):
            raise EvalError("N list must be positive and strictly increasing")
        if self.direction not in ("forward_only", "forward_and_backward"):
            raise EvalError(f"unknown direction {self.direction!r}")


@dataclass
class QueryResult:
    gold_id: int
    rank: int  # 0-based rank of the gold entity; universe size if absent
    gold_absent: bool = False


def recall_at_n(ranked_lists: list[np.ndarray], gold_ids: list[int],
                n_list=DEFAULT_N) -> dict:
    """Fraction of queries whose gold id appears in each top-N prefix.

    Queries whose gold id is missing from the ranked universe count as misses
    at every N and are flagged in the result.
    """
    if len(ranked_lists) != len(gold_ids):
        raise EvalError("ranked list / gold label count mismatch")
    total = len(gold_ids)
    recalls = {n: 0 for n in n_list}
    absent = 0
    for ranked, gold in zip(ranked_lists, gold_ids):
        positions = np.nonzero(np.asarray(ranked) == gold)[0]
        if positions.size == 0:
            absent += 1
            continue
        rank = int(positions[0])
        for n in n_list:
            if rank < n:
                recalls[n] += 1
    table = {f"@{n}": (recalls[n] / total if total else 0.0) for n in n_list}
    table["queries"] = total
    table["gold_absent"] = absent
    return table


def gold_ranks(scores: np.ndarray, gold_ids: np.ndarray) -> np.ndarray:
    """0-based rank of each query's gold entity under the tie-break rule
    (higher score first, then lower internal id)."""
    q = scores.shape[0]
    gold_scores = scores[np.arange(q), gold_ids]
    better = (scores > gold_scores[:, None]).sum(axis=1)
    tied_lower = ((scores == gold_scores[:, None])
                  & (np.arange(scores.shape[1])[None, :] < gold_ids[:, None])).sum(axis=1)
    return better + tied_lower


def entity_matrix(model: CycleModel, assets: TrainAssets,
                  relation_graph: SnapshotGraph, batch: int = 256) -> np.ndarray:
    """Scoring vectors for every entity, graph side evaluated on full
    neighborhoods of the given relation snapshot (deterministic)."""
    registry = assets.kg.registry
    n = len(registry)
    out = np.zeros((n, model.dims.text_dim))
    for start in range(0, n, batch):
        ids = np.arange(start, min(start + batch, n))
        seqs = [te.build_entity_seq(registry.by_id(int(i)), assets.vocab) for i in ids]
        vecs = model.entity_vectors(seqs, ids, relation_graph, assets.feature_graph,
                                    sampler=None)
        out[ids] = vecs.values
    return out


def mention_matrix(model: CycleModel, assets: TrainAssets,
                   mentions: list[MentionRecord], batch: int = 256) -> np.ndarray:
    out = np.zeros((len(mentions), model.dims.text_dim))
    for start in range(0, len(mentions), batch):
        chunk = mentions[start: start + batch]
        seqs = [te.build_mention_seq(m, assets.vocab) for m in chunk]
        out[start: start + len(chunk)] = model.encode_mentions(seqs).values
    return out


def evaluate_split(checkpoint: Checkpoint, assets: TrainAssets,
                   mentions: list[MentionRecord], test_year: int,
                   n_list=DEFAULT_N) -> tuple[dict, list[QueryResult]]:
    """Recall table plus per-query detail for one (checkpoint, test year) cell."""
    split = [m for m in mentions if m.year == test_year]
    if not split:
        raise EvalError(f"no test mentions for year {test_year}")
    model = checkpoint.build_model(assets.feature_matrix)
    ents = entity_matrix(model, assets, assets.kg.snapshots[test_year])
    ments = mention_matrix(model, assets, split)
    scores = ments @ ents.T
    gold = np.array([assets.kg.registry.by_qid(m.gold_qid).internal_id for m in split])
    ranks = gold_ranks(scores, gold)
    total = len(split)
    table = {f"@{n}": float((ranks < n).sum() / total) for n in n_list}
    table["queries"] = total
    table["gold_absent"] = 0
    detail = [QueryResult(gold_id=int(g), rank=int(r)) for g, r in zip(gold, ranks)]
    return table, detail


def gap_matrix(checkpoints: dict[int, Checkpoint], assets: TrainAssets,
               mentions: list[MentionRecord], cfg: EvalConfig) -> dict:
    """Fill every (train_year, test_year) cell and aggregate recall per gap.

    forward_and_backward averages cells with |test - train| = gap; forward_only
    averages cells with test - train = gap >= 0.  Gap 0 is identical under both.
    """
    years = assets.kg.years
    per_cell = {}
    for train_year, ckpt in sorted(checkpoints.items()):
        for test_year in years:
            table, _ = evaluate_split(ckpt, assets, mentions, test_year, cfg.n_list)
            per_cell[f"{train_year}->{test_year}"] = table
    per_gap = {}
    gaps = sorted({abs(t2 - t1) for t1 in checkpoints for t2 in years})
    for gap in gaps:
        cells = []
        for t1 in checkpoints:
            for t2 in years:
                delta = t2 - t1
                if cfg.direction == "forward_only" and delta != gap:
                    continue
                if cfg.direction == "forward_and_backward" and abs(delta) != gap:
                    continue
                cells.append(per_cell[f"{t1}->{t2}"])
        if not cells:
            continue
        agg = {f"@{n}": float(np.mean([c[f"@{n}"] for c in cells])) for n in cfg.n_list}
        agg["cells"] = len(cells)
        per_gap[str(gap)] = agg
    return {"per_cell": per_cell, "per_gap": per_gap,
            "direction": cfg.direction, "n_list": list(cfg.n_list)}


def boost(model_recall: float, baseline_recall: float) -> float | None:
    """Relative improvement in percent; None when the baseline is zero."""
    if baseline_recall == 0:
        return None
    return 100.0 * (model_recall - baseline_recall) / baseline_recall


def degree_report(improvements: list[tuple[int, float]],
                  bucket_edges: list[int] | None = None) -> dict:
    """Mean improvement per degree bucket plus the least-squares slope of
    improvement vs degree over the raw points."""
    if not improvements:
        return {"buckets": [], "slope": None}
    degrees = np.array([d for d, _ in improvements], dtype=np.float64)
    deltas = np.array([v for _, v in improvements], dtype=np.float64)
    if bucket_edges is None:
        max_deg = int(degrees.max())
        bucket_edges = list(range(0, max_deg + 2))
    buckets = []
    for lo, hi in zip(bucket_edges[:-1], bucket_edges[1:]):
        mask = (degrees >= lo) & (degrees < hi)
        if not mask.any():
            buckets.append({"lo": lo, "hi": hi, "count": 0})
            continue
        buckets.append({"lo": lo, "hi": hi, "count": int(mask.sum()),
                        "mean_improvement": float(deltas[mask].mean())})
    if np.ptp(degrees) == 0:
        slope = 0.0 if np.ptp(deltas) == 0 else None
    else:
        slope = float(np.polyfit(degrees, deltas, 1)[0])
    return {"buckets": buckets, "slope": slope}


def per_query_improvement(detail_model: list[QueryResult],
                          detail_baseline: list[QueryResult],
                          train_graph: SnapshotGraph) -> list[tuple[int, float]]:
    """Per-query recall@1 delta (model minus baseline), keyed by the gold
    entity's degree in the train-year relation graph."""
    if len(detail_model) != len(detail_baseline):
        raise EvalError("query detail length mismatch")
    out = []
    for qm, qb in zip(detail_model, detail_baseline):
        if qm.gold_id != qb.gold_id:
            raise EvalError("query alignment mismatch between model and baseline")
        delta = float((qm.rank < 1) - (qb.rank < 1))
        out.append((train_graph.degree(qm.gold_id), delta))
    return out
