import numpy as np
import pytest

from cycle_el import pipeline, synth
from cycle_el.synth import SynthConfig


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A small generated corpus plus built artifacts, shared across tests."""
    root = tmp_path_factory.mktemp("tiny")
    years = (2019, 2020, 2021, 2022)
    cfg = SynthConfig(n_entities=80, years=years, drift_rate=0.15,
                      mentions_per_entity=3, seed=5)
    manifest = synth.generate(cfg, root / "data")
    pipeline.build_dataset_artifacts(root / "data", root / "artifacts", list(years),
                                     min_count=2, max_count=10 ** 6, knn_k=6,
                                     negative_cap=16, pool_seed=0, config_hash="tiny")
    return {"root": root, "years": list(years), "cfg": cfg, "manifest": manifest}


@pytest.fixture(scope="session")
def tiny_assets(tiny_dataset):
    root = tiny_dataset["root"]
    assets, mentions = pipeline.load_assets(root / "data", root / "artifacts",
                                            tiny_dataset["years"], 2019, 2020)
    return assets, mentions


def random_graph_edges(rng, n, m):
    edges = set()
    while len(edges) < m:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(int(u), int(v)), max(int(u), int(v))))
    return sorted(edges)
