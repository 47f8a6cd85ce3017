import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from aspd import geometry as G
from aspd.errors import ContractError, DimensionError, NumericError

seeds = st.integers(0, 2**32 - 1)


@given(seeds, st.integers(2, 24), st.integers(1, 6))
def test_knn_matches_oracle(seed, n, k):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n, 3))
    k = min(k, n)
    np.testing.assert_array_equal(G.knn(p, p, k), oracles.knn(p, p, k))


def test_knn_self_first_and_ties_to_lower_index():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(G.knn(p[:1], p, 4), [[0, 1, 2, 3]])


def test_knn_batched_uses_global_rows(rng):
    clouds = rng.normal(size=(3, 10, 3))
    out = G.knn_batched(clouds, 4)
    for b in range(3):
        np.testing.assert_array_equal(out[b * 10:(b + 1) * 10], G.knn(clouds[b], clouds[b], 4) + b * 10)


def test_knn_k_too_large():
    with pytest.raises(ContractError):
        G.knn(np.zeros((3, 3)), np.zeros((3, 3)), 4)


@given(seeds, st.integers(1, 40), st.data())
def test_fps_matches_oracle(seed, n, data):
    p = np.random.default_rng(seed).normal(size=(n, 3))
    m = data.draw(st.integers(1, n))
    start = data.draw(st.integers(0, n - 1))
    np.testing.assert_array_equal(G.fps(p, m, start), oracles.fps(p, m, start))


def test_fps_ties_go_to_lowest_index():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0]])
    # from the origin every other point is at distance 1
    np.testing.assert_array_equal(G.fps(p, 2, 0), [0, 1])


def test_fps_with_duplicates_returns_distinct_indices():
    p = np.zeros((5, 3))
    np.testing.assert_array_equal(G.fps(p, 5, 2), [2, 0, 1, 3, 4])


@given(seeds, st.integers(1, 30))
def test_fps_is_prefix_consistent(seed, n):
    p = np.random.default_rng(seed).normal(size=(n, 3))
    full = G.fps(p, n, 0)
    for m in range(1, n + 1):
        np.testing.assert_array_equal(G.fps(p, m, 0), full[:m])


def test_fps_errors():
    p = np.zeros((4, 3))
    with pytest.raises(ContractError):
        G.fps(p, 5)
    with pytest.raises(ContractError):
        G.fps(p, 2, start=4)


def test_random_sample_distinct_and_reproducible():
    p = np.zeros((50, 3))
    a = G.random_sample(p, 20, 3)
    assert len(set(a.tolist())) == 20
    np.testing.assert_array_equal(a, G.random_sample(p, 20, 3))


@given(seeds, st.integers(1, 20), st.integers(1, 20))
def test_chamfer_and_hausdorff_match_oracles(seed, n, m):
    rng = np.random.default_rng(seed)
    p, s = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert abs(G.chamfer(p, s) - oracles.chamfer(p, s)) < 1e-9
    assert abs(G.hausdorff(p, s) - oracles.hausdorff(p, s)) < 1e-9


def test_chamfer_single_point_example():
    assert G.chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == 2.0


@given(seeds)
def test_distances_symmetric_and_zero_on_identity(seed):
    rng = np.random.default_rng(seed)
    p, s = rng.normal(size=(9, 3)), rng.normal(size=(5, 3))
    assert G.chamfer(p, s) == pytest.approx(G.chamfer(s, p), abs=1e-12)
    assert G.hausdorff(p, s) == G.hausdorff(s, p)
    assert G.chamfer(p, p) == 0.0 and G.hausdorff(p, p) == 0.0


@given(seeds)
def test_subset_hausdorff_is_directed_from_superset(seed):
    p = np.random.default_rng(seed).normal(size=(12, 3))
    s = p[:4]
    _, d = G.directed_nearest(p, s)
    assert G.hausdorff(p, s) == pytest.approx(np.sqrt(d.max()), abs=1e-15)


@given(seeds, st.floats(0.1, 100))
def test_normalize_unit_sphere(seed, scale):
    p = np.random.default_rng(seed).normal(size=(20, 3)) * scale + 5
    q = G.normalize_unit_sphere(p)
    np.testing.assert_allclose(q.mean(axis=0), 0, atol=1e-12)
    assert np.linalg.norm(q, axis=1).max() == pytest.approx(1.0, abs=1e-12)


def test_normalize_degenerate_cloud():
    np.testing.assert_array_equal(G.normalize_unit_sphere(np.ones((3, 3))), np.zeros((3, 3)))


def test_point_validation():
    with pytest.raises(DimensionError):
        G.as_points(np.zeros((3, 2)))
    with pytest.raises(ContractError):
        G.as_points(np.zeros((0, 3)))
    with pytest.raises(NumericError):
        G.as_points(np.array([[0.0, np.nan, 0.0]]))
