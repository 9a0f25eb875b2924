import numpy as np
import pytest

from budget_router.ann_index import (AnnIndex, ExactIndex, IndexConfig,
                                     build_index, estimate_features, exact_knn,
                                     load_index, save_index, search)
from budget_router.ingest import HistoricalRecord

from conftest import make_records


def _rec(qid, emb, scores=(0.5,), costs=(1e-4,)):
    return HistoricalRecord(qid, np.asarray(emb, dtype=float),
                            np.asarray(scores, dtype=float),
                            np.asarray(costs, dtype=float))


def test_config_validation():
    with pytest.raises(ValueError):
        IndexConfig(k_neighbors=0)
    with pytest.raises(ValueError):
        IndexConfig(graph_degree=1)
    with pytest.raises(ValueError):
        IndexConfig(search_beam=3, k_neighbors=4)
    with pytest.raises(ValueError):
        IndexConfig(distance="manhattan")


def test_singleton_index():
    idx = build_index([_rec("only", [1.0, 2.0])])
    ns = search(idx, np.array([0.0, 0.0]), 1)
    assert ns.ids == ("only",)
    assert ns.positions.tolist() == [0]


def test_self_match_comes_first():
    records = make_records(20, dim=4, seed=1)
    idx = build_index(records, IndexConfig(search_beam=8))
    ns = search(idx, records[13].embedding, 3)
    assert ns.ids[0] == records[13].query_id
    assert ns.distances[0] == 0.0


def test_duplicates_all_retrievable():
    emb = [0.3, 0.7]
    records = [_rec("a", emb), _rec("b", emb), _rec("c", [5.0, 5.0])]
    idx = build_index(records, IndexConfig(k_neighbors=2, search_beam=3))
    ns = search(idx, np.asarray(emb), 2)
    assert set(ns.ids) == {"a", "b"}
    np.testing.assert_array_equal(ns.distances, [0.0, 0.0])
    # tie broken toward the lower position
    assert ns.positions.tolist() == [0, 1]


def test_k_beyond_pool_truncates():
    records = make_records(4, dim=3, seed=2)
    idx = build_index(records, IndexConfig(k_neighbors=4, search_beam=4))
    ns = search(idx, np.zeros(3), 10)
    assert ns.truncated
    assert len(ns.ids) == 4
    exact = exact_knn(records, np.zeros(3), 10)
    assert exact.truncated
    np.testing.assert_array_equal(ns.positions, exact.positions)


def test_k_equals_pool_matches_full_sort():
    records = make_records(30, dim=4, seed=3)
    idx = build_index(records, IndexConfig(search_beam=30))
    probe = np.random.default_rng(0).normal(size=4)
    ns = search(idx, probe, 30)
    dists = np.array([np.linalg.norm(r.embedding - probe) for r in records])
    expected = np.lexsort((np.arange(30), dists))
    np.testing.assert_array_equal(ns.positions, expected)


def test_beam_spanning_pool_equals_exact_scan():
    records = make_records(200, dim=8, seed=4)
    idx = build_index(records, IndexConfig(search_beam=16))
    rng = np.random.default_rng(9)
    for _ in range(25):
        probe = rng.normal(size=8)
        wide = idx.search(probe, 5, beam=len(records))
        exact = exact_knn(records, probe, 5)
        np.testing.assert_array_equal(wide.positions, exact.positions)
        np.testing.assert_array_equal(wide.distances, exact.distances)
        assert wide.ids == exact.ids


def test_estimate_k1_returns_stored_row():
    records = make_records(25, n_models=3, dim=4, seed=5)
    idx = build_index(records, IndexConfig(search_beam=8))
    est = estimate_features(idx, records[7].embedding, k=1)
    np.testing.assert_allclose(est.scores, records[7].scores, rtol=1e-12)
    np.testing.assert_allclose(est.costs, records[7].costs, rtol=1e-12)


def test_estimate_is_neighbor_mean():
    # three 1-d records whose scores are 0.2, 0.4, 0.6
    records = [
        _rec("a", [0.0], scores=(0.2,), costs=(1.0,)),
        _rec("b", [1.0], scores=(0.4,), costs=(2.0,)),
        _rec("c", [2.0], scores=(0.6,), costs=(3.0,)),
    ]
    idx = ExactIndex(records)
    est = estimate_features(idx, np.array([1.0]), k=3)
    assert est.scores[0] == pytest.approx(0.4, rel=1e-12)
    assert est.costs[0] == pytest.approx(2.0, rel=1e-12)


def test_estimate_bounded_by_neighbor_extremes():
    records = make_records(40, n_models=2, dim=3, seed=6)
    idx = build_index(records, IndexConfig(search_beam=12))
    rng = np.random.default_rng(1)
    for _ in range(10):
        est = estimate_features(idx, rng.normal(size=3), k=5)
        rows = est.neighbors.positions
        scores = np.stack([records[i].scores for i in rows])
        costs = np.stack([records[i].costs for i in rows])
        assert np.all(est.scores >= scores.min(axis=0) - 1e-12)
        assert np.all(est.scores <= scores.max(axis=0) + 1e-12)
        assert np.all(est.costs >= costs.min(axis=0) - 1e-12)
        assert np.all(est.costs <= costs.max(axis=0) + 1e-12)


def test_estimate_matches_hand_average():
    records = make_records(60, n_models=3, dim=4, seed=7)
    idx = ExactIndex(records)
    probe = np.random.default_rng(2).normal(size=4)
    est = estimate_features(idx, probe, k=4)
    rows = exact_knn(records, probe, 4).positions
    hand_scores = np.mean([records[i].scores for i in rows], axis=0)
    hand_costs = np.mean([records[i].costs for i in rows], axis=0)
    np.testing.assert_allclose(est.scores, hand_scores, atol=1e-12)
    np.testing.assert_allclose(est.costs, hand_costs, atol=1e-12)


def test_cosine_distance_supported():
    records = make_records(50, dim=6, seed=8)
    idx = build_index(records, IndexConfig(distance="cosine", search_beam=50))
    probe = np.random.default_rng(3).normal(size=6)
    ns = search(idx, probe, 5)
    exact = exact_knn(ExactIndex(records, distance="cosine"), probe, 5)
    np.testing.assert_array_equal(ns.positions, exact.positions)


def test_dimension_mismatch_raises():
    idx = build_index(make_records(5, dim=4, seed=9))
    with pytest.raises(ValueError):
        search(idx, np.zeros(3), 2)


def test_save_load_roundtrip(tmp_path):
    records = make_records(80, n_models=2, dim=5, seed=10)
    idx = build_index(records, IndexConfig(graph_degree=6, search_beam=20, seed=4))
    path = tmp_path / "index.npz"
    save_index(idx, path)
    back = load_index(path)
    assert isinstance(back, AnnIndex)
    assert back.config == idx.config
    rng = np.random.default_rng(11)
    for _ in range(20):
        probe = rng.normal(size=5)
        a = idx.search(probe, 5)
        b = back.search(probe, 5)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.distances, b.distances)


def test_build_deterministic_for_seed():
    records = make_records(120, dim=6, seed=12)
    a = build_index(records, IndexConfig(seed=7))
    b = build_index(records, IndexConfig(seed=7))
    probe = np.random.default_rng(5).normal(size=6)
    np.testing.assert_array_equal(a.search(probe, 8).positions,
                                  b.search(probe, 8).positions)


def test_recall_on_modest_pool():
    records = make_records(1500, dim=16, seed=13)
    idx = build_index(records, IndexConfig(search_beam=64))
    rng = np.random.default_rng(6)
    hits = total = 0
    for _ in range(50):
        probe = rng.normal(size=16)
        approx = set(search(idx, probe, 5).ids)
        truth = set(exact_knn(records, probe, 5).ids)
        hits += len(approx & truth)
        total += len(truth)
    assert hits / total >= 0.9
