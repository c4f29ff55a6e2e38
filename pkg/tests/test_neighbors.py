import numpy as np
import pytest

from kfields.neighbors import brute_force_nearest, nearest_neighbors


def _check_against_brute(ref, query):
    idx, dist = nearest_neighbors(ref, query)
    bidx, bdist = brute_force_nearest(ref, query)
    # indices may differ on exact ties; distances must agree
    assert np.abs(dist - bdist).max() < 1e-12
    got = np.linalg.norm(ref[idx] - query, axis=1)
    assert np.abs(got - dist).max() < 1e-12
    return idx, dist


def test_matches_brute_force_uniform():
    rng = np.random.default_rng(0)
    ref = rng.uniform(-1, 1, size=(500, 3))
    query = rng.uniform(-1.2, 1.2, size=(300, 3))
    _check_against_brute(ref, query)


def test_matches_brute_force_clustered():
    rng = np.random.default_rng(1)
    # tight clusters stress the grid walk: many empty cells between them
    centers = rng.uniform(-5, 5, size=(8, 3))
    ref = np.concatenate(
        [c + 0.01 * rng.normal(size=(60, 3)) for c in centers])
    query = np.concatenate([
        rng.uniform(-6, 6, size=(100, 3)),
        centers + 0.005 * rng.normal(size=(8, 3)),
    ])
    _check_against_brute(ref, query)


def test_matches_brute_force_coplanar():
    rng = np.random.default_rng(2)
    # degenerate extent on one axis must not break the cell hashing
    ref = rng.uniform(-1, 1, size=(200, 3))
    ref[:, 2] = 0.25
    query = rng.uniform(-1, 1, size=(100, 3))
    _check_against_brute(ref, query)


def test_single_reference_point():
    ref = np.array([[1.0, 2.0, 3.0]])
    query = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.5]])
    idx, dist = nearest_neighbors(ref, query)
    assert np.array_equal(idx, [0, 0])
    assert dist[0] == pytest.approx(np.sqrt(14.0))
    assert dist[1] == pytest.approx(0.5)


def test_query_on_reference_point():
    rng = np.random.default_rng(3)
    ref = rng.uniform(-1, 1, size=(50, 3))
    idx, dist = nearest_neighbors(ref, ref[[7, 21]])
    assert np.array_equal(idx, [7, 21])
    assert np.array_equal(dist, [0.0, 0.0])


def test_empty_query_ok_empty_ref_rejected():
    ref = np.zeros((3, 3))
    idx, dist = nearest_neighbors(ref, np.zeros((0, 3)))
    assert len(idx) == 0 and len(dist) == 0
    with pytest.raises(ValueError):
        nearest_neighbors(np.zeros((0, 3)), ref)


def test_far_outside_queries():
    rng = np.random.default_rng(4)
    ref = rng.uniform(-1, 1, size=(100, 3))
    query = np.array([[100.0, 0, 0], [0, -100.0, 0]])
    _check_against_brute(ref, query)


def test_brute_force_chunking_invariant():
    rng = np.random.default_rng(5)
    ref = rng.uniform(-1, 1, size=(150, 3))
    query = rng.uniform(-1, 1, size=(80, 3))
    i1, d1 = brute_force_nearest(ref, query, chunk=7)
    i2, d2 = brute_force_nearest(ref, query, chunk=4096)
    assert np.array_equal(i1, i2)
    assert np.array_equal(d1, d2)
