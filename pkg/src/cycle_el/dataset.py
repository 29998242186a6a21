"""Graph-based dataset construction.

Builds the three structured inputs derived from the corpus: a binary
entity-by-token feature matrix over frequency-filtered description tokens, a
k-NN cosine feature graph over description embeddings, and the cross-year
positive/negative sample pools obtained by diffing relation snapshots.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .store import EntityRegistry, SnapshotGraph, StoreError, build_graph

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel punctuation into its own tokens."""
    return _TOKEN_RE.findall(text.lower())


class DatasetError(ValueError):
    pass


@dataclass
class TokenFilterConfig:
    min_count: int = 46
    max_count: int = 200

    def __post_init__(self):
        if not (0 < self.min_count <= self.max_count):
            raise DatasetError("need 0 < min_count <= max_count")


@dataclass
class FeatureGraphConfig:
    k: int = 10
    seed: int = 0  # unused by exact search; kept for config hashing


@dataclass
class FeatureMatrix:
    n: int
    m: int
    rows: list[np.ndarray]  # per-entity sorted unique column indices
    vocab: dict[str, int]

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.m), dtype=np.float64)
        for i, cols in enumerate(self.rows):
            out[i, cols] = 1.0
        return out

    def save(self, path: str | Path, config_hash: str = ""):
        path = Path(path)
        with path.open("w") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            fh.write(f"{self.n} {self.m}\n")
            for cols in self.rows:
                fh.write(" ".join(str(c) for c in cols) + "\n")
        vocab_path = path.with_suffix(path.suffix + ".vocab")
        with vocab_path.open("w") as fh:
            for token in sorted(self.vocab, key=self.vocab.get):
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        path = Path(path)
        rows: list[np.ndarray] = []
        with path.open() as fh:
            header = fh.readline()
            while header.startswith("#"):
                header = fh.readline()
            n, m = (int(x) for x in header.split())
            for line in fh:
                parts = line.split()
                rows.append(np.array([int(p) for p in parts], dtype=np.int64))
        if len(rows) != n:
            raise DatasetError(f"{path}: expected {n} rows, found {len(rows)}")
        vocab_path = path.with_suffix(path.suffix + ".vocab")
        vocab: dict[str, int] = {}
        if vocab_path.exists():
            for i, line in enumerate(vocab_path.open()):
                vocab[line.rstrip("\n")] = i
        return cls(n=n, m=m, rows=rows, vocab=vocab)


@dataclass
class SamplePools:
    train_year: int
    target_year: int
    graph_kind: str  # "relation" | "feature"
    positives: list[np.ndarray]
    negatives: list[np.ndarray]

    def __post_init__(self):
        for i, (p, neg) in enumerate(zip(self.positives, self.negatives)):
            inter = np.intersect1d(p, neg)
            if inter.size:
                raise DatasetError(f"node {i}: positive/negative pools overlap")
            if i in p or i in neg:
                raise DatasetError(f"node {i}: pool contains the node itself")

    def save(self, path: str | Path, config_hash: str = ""):
        with Path(path).open("w") as fh:
            header = {"t1": self.train_year, "t2": self.target_year, "kind": self.graph_kind}
            if config_hash:
                header["config_hash"] = config_hash
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for node, (p, neg) in enumerate(zip(self.positives, self.negatives)):
                fh.write(json.dumps({"node": node, "positives": [int(x) for x in p],
                                     "negatives": [int(x) for x in neg]}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SamplePools":
        with Path(path).open() as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        positives = [np.array(r["positives"], dtype=np.int64) for r in rows]
        negatives = [np.array(r["negatives"], dtype=np.int64) for r in rows]
        return cls(train_year=header["t1"], target_year=header["t2"], graph_kind=header["kind"],
                   positives=positives, negatives=negatives)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_feature_matrix(registry: EntityRegistry, tokenizer=tokenize,
                         cfg: TokenFilterConfig | None = None) -> FeatureMatrix:
    """Binary entity-by-token matrix; tokens kept iff their corpus-wide
    occurrence count lies in [min_count, max_count] (bounds inclusive)."""
    cfg = cfg or TokenFilterConfig()
    token_lists = [tokenizer(rec.description) for rec in registry]
    counts: Counter[str] = Counter()
    for toks in token_lists:
        counts.update(toks)
    retained = sorted(t for t, c in counts.items() if cfg.min_count <= c <= cfg.max_count)
    if not retained:
        raise DatasetError("empty vocabulary: every token fell outside the frequency bounds")
    vocab = {t: j for j, t in enumerate(retained)}
    rows = []
    for toks in token_lists:
        cols = sorted({vocab[t] for t in toks if t in vocab})
        rows.append(np.array(cols, dtype=np.int64))
    return FeatureMatrix(n=len(registry), m=len(vocab), rows=rows, vocab=vocab)


def embed_descriptions(registry: EntityRegistry, provider) -> np.ndarray:
    """Stack per-entity description embeddings; provider maps text -> 1-D vector."""
    rows = []
    width = None
    for rec in registry:
        try:
            vec = np.asarray(provider(rec.description), dtype=np.float64)
        except Exception as exc:
            raise DatasetError(f"embedding provider failed for qid {rec.qid!r}: {exc}") from exc
        if vec.ndim != 1:
            raise DatasetError(f"embedding provider returned non-vector for qid {rec.qid!r}")
        if width is None:
            width = vec.size
        elif vec.size != width:
            raise DatasetError(f"embedding width mismatch for qid {rec.qid!r}")
        rows.append(vec)
    return np.vstack(rows) if rows else np.zeros((0, 0))


def feature_row_provider(matrix: FeatureMatrix, registry: EntityRegistry):
    """Default embedding provider: the entity's L2-normalized feature-matrix row."""
    by_desc = {}
    for rec in registry:
        cols = matrix.rows[rec.internal_id]
        vec = np.zeros(matrix.m)
        vec[cols] = 1.0
        norm = np.linalg.norm(vec)
        by_desc[rec.description] = vec / norm if norm > 0 else vec

    def provider(description: str) -> np.ndarray:
        return by_desc[description]

    return provider


def build_feature_graph(embeddings: np.ndarray, cfg: FeatureGraphConfig) -> SnapshotGraph:
    """Symmetrized exact cosine k-NN graph; ties break toward lower internal id.

    Zero-vector rows (cosine undefined) become isolated nodes.
    """
    n = embeddings.shape[0]
    if cfg.k >= n:
        raise DatasetError(f"k={cfg.k} must be < n={n}")
    if cfg.k < 1:
        raise DatasetError("k must be >= 1")
    topk = kernels.knn_topk(embeddings, cfg.k)
    edges = [(i, int(j)) for i in range(n) for j in topk[i] if j >= 0]
    return build_graph(n, edges, year=0, kind="feature")


def diff_pools(t1_graph: SnapshotGraph, t2_graph: SnapshotGraph) -> SamplePools:
    """Cross-year pools: positives are neighbors gained at t2, negatives are
    neighbors lost at t2 (pure set algebra on the two edge sets)."""
    if t1_graph.n != t2_graph.n:
        raise DatasetError("snapshot node counts differ")
    if t1_graph.kind != "relation" or t2_graph.kind != "relation":
        raise DatasetError("diff_pools expects relation graphs")
    positives, negatives = [], []
    for i in range(t1_graph.n):
        old = t1_graph.neighbors(i)
        new = t2_graph.neighbors(i)
        positives.append(np.setdiff1d(new, old, assume_unique=True))
        negatives.append(np.setdiff1d(old, new, assume_unique=True))
    return SamplePools(train_year=t1_graph.year, target_year=t2_graph.year,
                       graph_kind="relation", positives=positives, negatives=negatives)


def pools_feature(feature_graph: SnapshotGraph, negative_cap: int = 32,
                  seed: int = 0) -> SamplePools:
    """Feature-graph pools: positives are all direct neighbors; negatives are a
    seeded uniform sample (without replacement) of non-neighbors."""
    if feature_graph.kind != "feature":
        raise DatasetError("pools_feature expects a feature graph")
    n = feature_graph.n
    all_nodes = np.arange(n)
    positives, negatives = [], []
    for i in range(n):
        neigh = feature_graph.neighbors(i)
        positives.append(neigh.copy())
        non = np.setdiff1d(all_nodes, np.append(neigh, i), assume_unique=False)
        take = min(negative_cap, non.size)
        if take > 0:
            rng = np.random.default_rng([seed, i])
            sampled = rng.choice(non, size=take, replace=False)
            negatives.append(np.sort(sampled))
        else:
            negatives.append(np.empty(0, dtype=np.int64))
    return SamplePools(train_year=feature_graph.year, target_year=feature_graph.year,
                       graph_kind="feature", positives=positives, negatives=negatives)
