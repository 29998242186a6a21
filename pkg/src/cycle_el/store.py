"""Immutable corpus and per-year snapshot graph store.

File formats:
  entities: line-delimited JSON with keys qid, title, description
  mentions: line-delimited JSON with keys context_left, mention, context_right,
            label_qid, category, year
  edges:    tab-separated "head_qid<TAB>tail_qid", '#' starts a comment line
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse


class StoreError(ValueError):
    pass


@dataclass(frozen=True)
class EntityRecord:
    qid: str
    title: str
    description: str
    internal_id: int


@dataclass(frozen=True)
class MentionRecord:
    context_left: tuple[str, ...]
    mention: tuple[str, ...]
    context_right: tuple[str, ...]
    gold_qid: str
    category: str  # "continual" | "new"
    year: int


class EntityRegistry:
    """Dense internal ids assigned in file order; qid lookup both ways."""

    def __init__(self, records: list[EntityRecord]):
        self._records = records
        self._by_qid = {r.qid: r for r in records}
        if len(self._by_qid) != len(records):
            raise StoreError("duplicate qids in registry")

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def by_qid(self, qid: str) -> EntityRecord:
        try:
            return self._by_qid[qid]
        except KeyError:
            raise StoreError(f"unknown qid {qid!r}") from None

    def by_id(self, internal_id: int) -> EntityRecord:
        return self._records[internal_id]

    def has_qid(self, qid: str) -> bool:
        return qid in self._by_qid


@dataclass
class SnapshotGraph:
    """Undirected entity graph as symmetric CSR with zero diagonal."""

    year: int
    n: int
    adjacency: sparse.csr_matrix
    kind: str  # "relation" | "feature"
    dropped_edges: int = 0
    dropped_self_loops: int = 0

    def neighbors(self, node: int) -> np.ndarray:
        if not 0 <= node < self.n:
            raise StoreError(f"node {node} out of range [0, {self.n})")
        adj = self.adjacency
        return adj.indices[adj.indptr[node]: adj.indptr[node + 1]]

    def degree(self, node: int) -> int:
        return int(self.neighbors(node).size)

    def edge_set(self) -> set[tuple[int, int]]:
        coo = self.adjacency.tocoo()
        return {(int(i), int(j)) for i, j in zip(coo.row, coo.col) if i < j}

    def edge_count(self) -> int:
        return self.adjacency.nnz // 2


@dataclass
class TemporalKG:
    years: list[int]
    snapshots: dict[int, SnapshotGraph]
    registry: EntityRegistry

    def __post_init__(self):
        if self.years != sorted(self.years) or len(set(self.years)) != len(self.years):
            raise StoreError("years must be strictly increasing")
        n = len(self.registry)
        for year in self.years:
            if self.snapshots[year].n != n:
                raise StoreError(f"snapshot {year} node count differs from registry")


def build_graph(n: int, edges, year: int, kind: str,
                dropped_edges: int = 0, dropped_self_loops: int = 0) -> SnapshotGraph:
    """Symmetrize and dedupe an iterable of (i, j) internal-id pairs."""
    pairs = set()
    for i, j in edges:
        if i == j:
            continue
        pairs.add((min(i, j), max(i, j)))
    if pairs:
        rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
        cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
        data = np.ones(len(pairs), dtype=bool)
        upper = sparse.coo_matrix((data, (rows, cols)), shape=(n, n))
        adj = (upper + upper.T).tocsr()
    else:
        adj = sparse.csr_matrix((n, n), dtype=bool)
    adj.sort_indices()
    return SnapshotGraph(year=year, n=n, adjacency=adj, kind=kind,
                         dropped_edges=dropped_edges, dropped_self_loops=dropped_self_loops)


def load_entities(path: str | Path) -> EntityRegistry:
    path = Path(path)
    records: list[EntityRecord] = []
    seen: set[str] = set()
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                qid, title = obj["qid"], obj["title"]
                description = obj.get("description", "")
            except (json.JSONDecodeError, KeyError, TypeError):
                raise StoreError(f"{path}:{lineno}: malformed entity line") from None
            if not title:
                raise StoreError(f"{path}:{lineno}: empty title for qid {qid!r}")
            if qid in seen:
                raise StoreError(f"{path}:{lineno}: duplicate qid {qid!r}")
            seen.add(qid)
            records.append(EntityRecord(qid=qid, title=title, description=description,
                                        internal_id=len(records)))
    return EntityRegistry(records)


def load_mentions(path: str | Path, registry: EntityRegistry) -> list[MentionRecord]:
    path = Path(path)
    mentions: list[MentionRecord] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = MentionRecord(
                    context_left=tuple(obj["context_left"]),
                    mention=tuple(obj["mention"]),
                    context_right=tuple(obj["context_right"]),
                    gold_qid=obj["label_qid"],
                    category=obj["category"],
                    year=int(obj["year"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise StoreError(f"{path}:{lineno}: malformed mention line") from None
            if not rec.mention:
                raise StoreError(f"{path}:{lineno}: empty mention span")
            if rec.category not in ("continual", "new"):
                raise StoreError(f"{path}:{lineno}: bad category {rec.category!r}")
            if not registry.has_qid(rec.gold_qid):
                # a mention pointing outside the entity universe is a hard error
                raise StoreError(f"{path}:{lineno}: mention label {rec.gold_qid!r} "
                                 "not in entity registry")
            mentions.append(rec)
    return mentions


def load_snapshot(path: str | Path, year: int, registry: EntityRegistry,
                  kind: str = "relation") -> SnapshotGraph:
    path = Path(path)
    if not path.exists():
        raise StoreError(f"edge file not found: {path}")
    edges = []
    dropped = 0
    self_loops = 0
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise StoreError(f"{path}:{lineno}: expected 'head<TAB>tail'")
            head, tail = parts
            if head == tail:
                self_loops += 1
                continue
            if not (registry.has_qid(head) and registry.has_qid(tail)):
                dropped += 1
                continue
            edges.append((registry.by_qid(head).internal_id, registry.by_qid(tail).internal_id))
    return build_graph(len(registry), edges, year=year, kind=kind,
                       dropped_edges=dropped, dropped_self_loops=self_loops)


def load_temporal_kg(data_dir: str | Path, years: list[int]) -> tuple[TemporalKG, list[MentionRecord]]:
    """Load the standard on-disk layout: entities.jsonl, mentions.jsonl, edges_<year>.tsv."""
    data_dir = Path(data_dir)
    registry = load_entities(data_dir / "entities.jsonl")
    mentions = load_mentions(data_dir / "mentions.jsonl", registry)
    snapshots = {
        year: load_snapshot(data_dir / f"edges_{year}.tsv", year, registry) for year in years
    }
    kg = TemporalKG(years=sorted(years), snapshots=snapshots, registry=registry)
    return kg, mentions
