import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycle_el import dataset as ds
from cycle_el import store
from cycle_el.store import EntityRecord, EntityRegistry, build_graph

from conftest import random_graph_edges


def make_registry(descs):
    return EntityRegistry([
        EntityRecord(qid=f"Q{i}", title=f"t{i}", description=d, internal_id=i)
        for i, d in enumerate(descs)
    ])


def test_tokenize_lowercase_and_punct():
    assert ds.tokenize("Hello, World-2!") == ["hello", ",", "world", "-", "2", "!"]


def test_filter_bounds_inclusive():
    # token "mid" appears exactly at both bounds; both must be kept
    descs = ["mid lo"] * 3 + ["mid"] * 1
    reg = make_registry(descs)
    mat = ds.build_feature_matrix(reg, cfg=ds.TokenFilterConfig(3, 4))
    assert "mid" in mat.vocab  # count 4 == max bound
    assert "lo" in mat.vocab   # count 3 == min bound


def test_filter_excludes_outside_bounds():
    descs = ["rare common common"] + ["common"] * 3
    reg = make_registry(descs)
    mat = ds.build_feature_matrix(reg, cfg=ds.TokenFilterConfig(2, 6))
    assert "rare" not in mat.vocab
    assert "common" in mat.vocab


def test_empty_vocabulary_is_error():
    reg = make_registry(["a b", "c d"])
    with pytest.raises(ds.DatasetError, match="empty vocabulary"):
        ds.build_feature_matrix(reg, cfg=ds.TokenFilterConfig(50, 60))


def test_feature_matrix_binary_rows():
    reg = make_registry(["x x x y", "y x"])
    mat = ds.build_feature_matrix(reg, cfg=ds.TokenFilterConfig(1, 10))
    dense = mat.dense()
    assert set(np.unique(dense)) <= {0.0, 1.0}  # binary despite repeats


def test_feature_matrix_save_load(tmp_path):
    reg = make_registry(["x y z", "y z", "x"])
    mat = ds.build_feature_matrix(reg, cfg=ds.TokenFilterConfig(1, 10))
    mat.save(tmp_path / "fm.txt", "deadbeef")
    back = ds.FeatureMatrix.load(tmp_path / "fm.txt")
    assert back.n == mat.n and back.m == mat.m
    assert np.array_equal(back.dense(), mat.dense())
    assert back.vocab == mat.vocab


def test_feature_graph_k_too_large():
    emb = np.eye(3)
    with pytest.raises(ds.DatasetError):
        ds.build_feature_graph(emb, ds.FeatureGraphConfig(k=3))


def test_feature_graph_is_symmetric_union():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(30, 8))
    g = ds.build_feature_graph(emb, ds.FeatureGraphConfig(k=3))
    assert g.kind == "feature"
    for u, v in g.edge_set():
        assert u in g.neighbors(v) and v in g.neighbors(u)


def brute_force_diff(g1, g2):
    """O(n^2) reference for the cross-year pools."""
    pos, neg = [], []
    for i in range(g1.n):
        p = [j for j in range(g1.n)
             if j in g2.neighbors(i) and j not in g1.neighbors(i)]
        q = [j for j in range(g1.n)
             if j in g1.neighbors(i) and j not in g2.neighbors(i)]
        pos.append(np.array(p, dtype=np.int64))
        neg.append(np.array(q, dtype=np.int64))
    return pos, neg


def test_diff_pools_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(5, 40))
        g1 = build_graph(n, random_graph_edges(rng, n, 2 * n), 2019, "relation")
        g2 = build_graph(n, random_graph_edges(rng, n, 2 * n), 2020, "relation")
        pools = ds.diff_pools(g1, g2)
        ref_pos, ref_neg = brute_force_diff(g1, g2)
        for i in range(n):
            assert np.array_equal(np.sort(pools.positives[i]), np.sort(ref_pos[i]))
            assert np.array_equal(np.sort(pools.negatives[i]), np.sort(ref_neg[i]))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_diff_pools_antisymmetry(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 30))
    g1 = build_graph(n, random_graph_edges(rng, n, n), 2019, "relation")
    g2 = build_graph(n, random_graph_edges(rng, n, n), 2020, "relation")
    fwd = ds.diff_pools(g1, g2)
    bwd = ds.diff_pools(g2, g1)
    for i in range(n):
        assert np.array_equal(np.sort(fwd.positives[i]), np.sort(bwd.negatives[i]))
        assert np.array_equal(np.sort(fwd.negatives[i]), np.sort(bwd.positives[i]))


def test_diff_pools_rejects_feature_graphs():
    rng = np.random.default_rng(2)
    g1 = build_graph(5, random_graph_edges(rng, 5, 4), 2019, "feature")
    g2 = build_graph(5, random_graph_edges(rng, 5, 4), 2020, "relation")
    with pytest.raises(ds.DatasetError):
        ds.diff_pools(g1, g2)


def test_pools_feature_negatives_disjoint_and_capped():
    rng = np.random.default_rng(3)
    g = build_graph(25, random_graph_edges(rng, 25, 60), 2019, "feature")
    pools = ds.pools_feature(g, negative_cap=5, seed=0)
    for i in range(25):
        assert np.array_equal(np.sort(pools.positives[i]), np.sort(g.neighbors(i)))
        assert pools.negatives[i].size <= 5
        assert i not in pools.negatives[i]
        assert not set(pools.negatives[i]) & set(pools.positives[i])


def test_pools_feature_deterministic():
    rng = np.random.default_rng(4)
    g = build_graph(20, random_graph_edges(rng, 20, 40), 2019, "feature")
    a = ds.pools_feature(g, negative_cap=4, seed=7)
    b = ds.pools_feature(g, negative_cap=4, seed=7)
    for i in range(20):
        assert np.array_equal(a.negatives[i], b.negatives[i])


def test_sample_pools_save_load(tmp_path):
    rng = np.random.default_rng(5)
    g1 = build_graph(10, random_graph_edges(rng, 10, 12), 2019, "relation")
    g2 = build_graph(10, random_graph_edges(rng, 10, 12), 2020, "relation")
    pools = ds.diff_pools(g1, g2)
    pools.save(tmp_path / "p.jsonl", "cafe")
    back = ds.SamplePools.load(tmp_path / "p.jsonl")
    assert back.train_year == 2019 and back.target_year == 2020
    for i in range(10):
        assert np.array_equal(back.positives[i], pools.positives[i])
        assert np.array_equal(back.negatives[i], pools.negatives[i])


def test_sample_pools_overlap_rejected():
    with pytest.raises(ds.DatasetError):
        ds.SamplePools(train_year=2019, target_year=2020, graph_kind="relation",
                       positives=[np.array([1, 2])], negatives=[np.array([2])])
