import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
import small
from aspd import geometry
from aspd import tensor as T
from aspd.errors import ConfigError, ContractError
from aspd.presampling import (
    EmbedConfig,
    adaptive_k,
    edgeconv_layer,
    embed,
    embed_features,
    init_embedder,
    presample,
    select,
)

seeds = st.integers(0, 2**32 - 1)


def literal_embedding(points, k, params, layers=3):
    idx = oracles.knn(points, points, k)
    h, outs = points, []
    for i in range(layers):
        h = oracles.edgeconv(h, idx, params[f"embed.ec{i}.w"], params[f"embed.ec{i}.b"])
        outs.append(h)
    return oracles.relu(np.concatenate(outs, axis=1) @ params["embed.fuse.w"] + params["embed.fuse.b"])


@given(seeds, st.integers(5, 14), st.integers(1, 5))
def test_embedding_matches_edge_by_edge_construction(seed, n, k):
    rng = np.random.default_rng(seed)
    params = init_embedder(small.EMBED, rng)
    params = {key: v + rng.normal(scale=0.1, size=v.shape) for key, v in params.items()}
    p = rng.normal(size=(n, 3))
    np.testing.assert_allclose(embed(p, k, params).data, literal_embedding(p, k, params), atol=1e-10)


def test_edgeconv_rows_equal_full_rows(rng):
    f = rng.normal(size=(12, 4))
    w, b = rng.normal(size=(8, 5)), rng.normal(size=5)
    idx = geometry.knn(rng.normal(size=(12, 3)), rng.normal(size=(12, 3)), 3)
    rows = np.array([7, 2, 2, 11])
    full = edgeconv_layer(f, idx, w, b).data
    np.testing.assert_array_equal(edgeconv_layer(f, idx, w, b, rows).data, full[rows])


def test_embed_features_rows_equal_full_rows(rng):
    params = init_embedder(small.EMBED, rng)
    p = rng.normal(size=(15, 3))
    idx = geometry.knn(p, p, 4)
    rows = np.array([3, 0, 14])
    full = embed_features(p, idx, params).data
    np.testing.assert_allclose(embed_features(p, idx, params, rows).data, full[rows], atol=1e-12)


def test_embedding_gradients(rng):
    params = init_embedder(small.EMBED, rng)
    params = {key: v + rng.normal(scale=0.1, size=v.shape) for key, v in params.items()}
    p = rng.normal(size=(10, 3))
    idx = geometry.knn(p, p, 3)
    r = rng.normal(size=(10, 5))
    loss = lambda prm: T.total(T.hadamard(embed_features(p, idx, prm), T.Tensor(r)))  # noqa: E731
    assert small.dict_grad_check(loss, params) < 1e-4


def test_embedding_is_permutation_equivariant(rng):
    params = init_embedder(EmbedConfig(), rng)
    p = rng.normal(size=(64, 3))
    perm = rng.permutation(64)
    a = embed(p, 10, params).data
    b = embed(p[perm], 10, params).data
    np.testing.assert_allclose(b, a[perm], atol=1e-9)


def test_presample_fps_rows_are_exact_input_points(rng):
    params = init_embedder(small.EMBED, rng)
    p = rng.normal(size=(20, 3))
    feats = embed(p, 4, params)
    out = presample(p, feats, 6, "fps", start=3)
    np.testing.assert_array_equal(out.indices, geometry.fps(p, 6, 3))
    np.testing.assert_array_equal(out.coords, p[out.indices])
    np.testing.assert_array_equal(out.joined.data[:, :3], out.coords)
    np.testing.assert_array_equal(out.joined.data[:, 3:], feats.data[out.indices])


def test_presample_random_is_reproducible(rng):
    p = rng.normal(size=(20, 3))
    feats = rng.normal(size=(20, 2))
    a = presample(p, feats, 5, "rs", seed=4).indices
    np.testing.assert_array_equal(a, presample(p, feats, 5, "rs", seed=4).indices)
    assert len(set(a.tolist())) == 5


def test_presample_errors(rng):
    p = rng.normal(size=(6, 3))
    with pytest.raises(ContractError):
        presample(p, np.zeros((6, 2)), 6)
    with pytest.raises(ConfigError):
        select(p, 2, "grid")
    with pytest.raises(ContractError):
        embed(p, 7, init_embedder(small.EMBED, rng))


@pytest.mark.parametrize("n,k", [(1024, 40), (2048, 80), (512, 20), (800, 31), (2000, 78), (1, 1), (3, 3), (50, 4)])
def test_adaptive_k(n, k):
    assert adaptive_k(n) == k


@given(st.integers(1, 100_000))
def test_adaptive_k_clamped(n):
    k = adaptive_k(n)
    assert min(4, n) <= k <= n
