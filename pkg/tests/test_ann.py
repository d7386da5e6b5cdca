import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stimclean import ann
from stimclean.core import ValidationError


@pytest.fixture(scope="module")
def pool():
    rng = np.random.default_rng(0)
    return rng.standard_normal((10_000, 16)), rng.standard_normal((100, 16))


@pytest.fixture(scope="module")
def forest(pool):
    return ann.build_forest(pool[0], T=50, leaf_capacity=500, seed=1)


def exact_knn(X, q, K):
    d = np.sum((X - q) ** 2, axis=1)
    return np.lexsort((np.arange(len(X)), d))[:K]


def test_recall_against_exact(pool, forest):
    X, Q = pool
    recall = [len(set(ann.knn(X, forest.query(q), q, 10)) & set(exact_knn(X, q, 10))) / 10
              for q in Q]
    assert np.mean(recall) >= 0.8


def test_candidate_bound(pool, forest):
    X, Q = pool
    for q in Q[:20]:
        assert forest.query(q).size <= forest.T * forest.leaf_capacity


def test_structure_audit():
    X = np.random.default_rng(2).standard_normal((2000, 6))
    f = ann.build_forest(X, T=5, leaf_capacity=500, seed=0)
    for tree in f.trees:
        allidx = np.concatenate(tree.leaves)
        assert np.array_equal(np.sort(allidx), np.arange(2000))
        assert max(leaf.size for leaf in tree.leaves) <= 500


def test_small_pool_single_leaf():
    X = np.random.default_rng(3).standard_normal((300, 4))
    f = ann.build_forest(X, T=3, leaf_capacity=500)
    assert all(t.n_internal == 0 and len(t.leaves) == 1 for t in f.trees)
    assert np.array_equal(f.query(X[0]), np.arange(300))


def test_pooled_point_is_own_candidate(pool, forest):
    X, _ = pool
    for i in (0, 17, 4242, 9999):
        assert i in forest.query(X[i])


def test_deterministic(pool):
    X, Q = pool
    a = ann.build_forest(X[:3000], T=4, leaf_capacity=200, seed=7)
    b = ann.build_forest(X[:3000], T=4, leaf_capacity=200, seed=7)
    assert np.array_equal(a.route(Q), b.route(Q))
    for ta, tb in zip(a.trees, b.trees):
        assert np.array_equal(ta.mid, tb.mid)


def test_duplicates_terminate():
    X = np.ones((1200, 3))
    f = ann.build_forest(X, T=2, leaf_capacity=100)
    assert all(len(t.leaves) == 1 and t.leaves[0].size == 1200 for t in f.trees)


def test_save_load_routes_identically(tmp_path, pool):
    X, Q = pool
    f = ann.build_forest(X[:4000], T=6, leaf_capacity=300, seed=3)
    f.save(tmp_path / "forest.bin")
    g = ann.ProjectionForest.load(tmp_path / "forest.bin")
    assert (g.T, g.leaf_capacity, g.dim, g.n_points, g.seed) == (6, 300, 16, 4000, 3)
    assert np.array_equal(f.route(Q), g.route(Q))
    assert np.array_equal(f.route(X[:4000]), g.route(X[:4000]))


def test_bad_forest_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValidationError):
        ann.ProjectionForest.load(p)


def test_dimension_mismatch(forest):
    with pytest.raises(ValidationError):
        forest.query(np.zeros(5))


def test_build_errors():
    with pytest.raises(ValidationError):
        ann.build_forest(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        ann.build_forest(np.zeros((10, 3)), T=0)


def test_knn_self():
    X = np.random.default_rng(4).standard_normal((50, 3))
    assert list(ann.knn(X, np.arange(50), X[7], 1)) == [7]


def test_knn_k_exceeds_pool():
    X = np.random.default_rng(5).standard_normal((20, 3))
    out = ann.knn(X, np.arange(20), np.zeros(3), 100)
    assert np.array_equal(out, exact_knn(X, np.zeros(3), 20))


def test_knn_empty_candidates():
    with pytest.raises(ValidationError):
        ann.knn(np.zeros((3, 2)), [], np.zeros(2), 1)


def test_knn_ties_to_lower_index():
    X = np.array([[1.0, 0], [-1.0, 0], [0, 1.0], [5.0, 5.0]])
    assert list(ann.knn(X, [3, 2, 1, 0], np.zeros(2), 2)) == [0, 1]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
def test_knn_matches_brute_force(seed, K):
    rng = np.random.default_rng(seed)
    # integer coordinates give exact distance ties
    X = rng.integers(-4, 5, (1000, 5)).astype(float)
    q = rng.integers(-4, 5, 5).astype(float)
    assert np.array_equal(ann.knn(X, np.arange(1000), q, K), exact_knn(X, q, K))
