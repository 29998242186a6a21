"""End-to-end plumbing shared by the CLI and the test harness: build the
derived dataset artifacts from a raw corpus directory, and load them back
into the bundle the trainer consumes."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import text_encoder as te
from .store import SnapshotGraph, TemporalKG, load_temporal_kg
from .trainer import TrainAssets


def dataset_pairs(years: list[int]) -> list[tuple[int, int]]:
    """All ordered year pairs; diff pools are built for each of them."""
    return [(t1, t2) for t1 in years for t2 in years if t1 != t2]


def build_dataset_artifacts(data_dir: str | Path, artifacts_dir: str | Path,
                            years: list[int], min_count: int, max_count: int,
                            knn_k: int, negative_cap: int, pool_seed: int,
                            config_hash: str = "") -> dict:
    """Build feature matrix, feature graph, and all sample pools onto disk."""
    data_dir, artifacts_dir = Path(data_dir), Path(artifacts_dir)
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    kg, mentions = load_temporal_kg(data_dir, years)

    matrix = ds.build_feature_matrix(
        kg.registry, cfg=ds.TokenFilterConfig(min_count=min_count, max_count=max_count))
    matrix.save(artifacts_dir / "feature_matrix.txt", config_hash)

    provider = ds.feature_row_provider(matrix, kg.registry)
    embeddings = ds.embed_descriptions(kg.registry, provider)
    feature_graph = ds.build_feature_graph(embeddings, ds.FeatureGraphConfig(k=knn_k))
    _save_feature_graph(artifacts_dir / "feature_graph.tsv", feature_graph, kg, config_hash)

    feat_pools = ds.pools_feature(feature_graph, negative_cap=negative_cap, seed=pool_seed)
    feat_pools.save(artifacts_dir / "pools_feature.jsonl", config_hash)

    for t1, t2 in dataset_pairs(years):
        pools = ds.diff_pools(kg.snapshots[t1], kg.snapshots[t2])
        pools.save(artifacts_dir / f"pools_rel_{t1}_{t2}.jsonl", config_hash)

    vocab = te.Vocabulary.build(kg.registry, mentions)
    vocab.save(artifacts_dir / "vocab.txt")

    manifest = {"years": years, "n": len(kg.registry), "m": matrix.m,
                "vocab_size": len(vocab), "config_hash": config_hash,
                "feature_edges": feature_graph.edge_count()}
    (artifacts_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True))
    return manifest


def _save_feature_graph(path: Path, graph: SnapshotGraph, kg: TemporalKG, config_hash: str):
    with path.open("w") as fh:
        fh.write(f"# kind=feature config_hash={config_hash}\n")
        for i, j in sorted(graph.edge_set()):
            fh.write(f"{kg.registry.by_id(i).qid}\t{kg.registry.by_id(j).qid}\n")


def artifact_config_hash(path: str | Path) -> str:
    """Read the config hash embedded in an artifact file (first line or JSON header)."""
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text()).get("config_hash", "")
    with path.open() as fh:
        first = fh.readline().strip()
    if first.startswith("#"):
        for part in first.split():
            if part.startswith("config_hash="):
                return part.split("=", 1)[1]
        return ""
    if first.startswith("{"):
        return json.loads(first).get("config_hash", "")
    return ""


def load_assets(data_dir: str | Path, artifacts_dir: str | Path, years: list[int],
                train_year: int, target_year: int):
    """Load the corpus plus built artifacts; returns (TrainAssets, mentions)."""
    data_dir, artifacts_dir = Path(data_dir), Path(artifacts_dir)
    kg, mentions = load_temporal_kg(data_dir, years)
    matrix = ds.FeatureMatrix.load(artifacts_dir / "feature_matrix.txt")
    feature_graph = _load_feature_graph(artifacts_dir / "feature_graph.tsv", kg)
    feat_pools = ds.SamplePools.load(artifacts_dir / "pools_feature.jsonl")
    rel_pools = ds.SamplePools.load(artifacts_dir / f"pools_rel_{train_year}_{target_year}.jsonl")
    vocab = te.Vocabulary.load(artifacts_dir / "vocab.txt")
    assets = TrainAssets(kg=kg, feature_matrix=matrix, feature_graph=feature_graph,
                         relation_pools=rel_pools, feature_pools=feat_pools, vocab=vocab)
    return assets, mentions


def _load_feature_graph(path: Path, kg: TemporalKG) -> SnapshotGraph:
    from .store import load_snapshot

    return load_snapshot(path, year=0, registry=kg.registry, kind="feature")
