import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
import small
from aspd import tensor as T
from aspd.errors import ContractError, DimensionError
from aspd.optim import grad_check
from aspd.refinement import (
    DENSITY_PREFIXES,
    RefineConfig,
    channel_attention,
    density_embedding,
    init_density,
    init_refiner,
    predict_offsets,
    refine_forward,
    trunk,
)

seeds = st.integers(0, 2**32 - 1)
CFG = small.REFINE


def params_for(seed, density=True):
    rng = np.random.default_rng(seed)
    p = init_refiner(CFG, rng, density)
    p["refine.proj1.w"] = rng.normal(scale=0.3, size=p["refine.proj1.w"].shape)
    return {k: v + rng.normal(scale=0.05, size=v.shape) if k.endswith(".b") else v for k, v in p.items()}


def inputs(seed, rows):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(rows, 3))
    return coords, np.concatenate([coords, rng.normal(size=(rows, CFG.in_dim - 3))], axis=1)


def test_init_refiner_keys():
    p = init_refiner(RefineConfig(), np.random.default_rng(0))
    assert p["refine.trunk0.w"].shape == (131, 128)
    assert p["refine.dens0.w"].shape == (134, 64)
    assert p["refine.att0.w"].shape == (192, 128)
    assert p["refine.att1.w"].shape == (128, 128)
    np.testing.assert_array_equal(p["refine.proj1.w"], 0)
    bare = init_refiner(RefineConfig(), np.random.default_rng(0), density=False)
    assert not any(k.startswith(DENSITY_PREFIXES) for k in bare)
    assert set(init_density(RefineConfig(), np.random.default_rng(0))) == set(p) - set(bare)


@given(seeds, st.integers(3, 10), st.integers(1, 3))
def test_density_matches_neighbour_by_neighbour_construction(seed, m, k_d):
    p = params_for(seed)
    coords, joined = inputs(seed, m)
    fused = density_embedding(coords, joined, k_d, p).data
    np.testing.assert_allclose(fused, oracles.density(coords, joined, k_d, p), atol=1e-10)


def test_zero_offset_head_returns_presampled_points():
    p = init_refiner(CFG, np.random.default_rng(0))
    coords, joined = inputs(1, 9)
    for enable in (False, True):
        pts, off = refine_forward(joined, coords, p, enable, CFG.k_d)
        np.testing.assert_array_equal(off.data, 0)
        np.testing.assert_array_equal(pts.data, coords)


def test_attention_gate_shape_and_range():
    p = params_for(2)
    coords, joined = inputs(2, 12)
    e = trunk(joined, p)
    ebar = density_embedding(coords, joined, 3, p, groups=2)
    w, e2 = channel_attention(e, ebar, p, groups=2)
    assert w.shape == e.shape
    assert np.all((w.data > 0) & (w.data < 1))
    # one gate per cloud, shared by its rows
    np.testing.assert_array_equal(w.data[:6], np.broadcast_to(w.data[0], (6, w.shape[1])))
    np.testing.assert_array_equal(e2.data, e.data * w.data)


def test_batched_refinement_equals_per_cloud():
    p = params_for(3)
    coords, joined = inputs(3, 14)
    both, _ = refine_forward(joined, coords, p, True, 3, groups=2)
    for g in range(2):
        one, _ = refine_forward(joined[g * 7:(g + 1) * 7], coords[g * 7:(g + 1) * 7], p, True, 3)
        np.testing.assert_allclose(both.data[g * 7:(g + 1) * 7], one.data, atol=1e-12)


def test_k_d_capped_at_cloud_size():
    p = params_for(4)
    coords, joined = inputs(4, 2)
    pts, _ = refine_forward(joined, coords, p, True, k_d=16)
    assert pts.shape == (2, 3) and np.all(np.isfinite(pts.data))
    with pytest.raises(ContractError):
        density_embedding(coords, joined, 3, p)


@pytest.mark.parametrize("enable", [False, True])
def test_refinement_gradients(enable):
    p = params_for(5, enable)
    coords, joined = inputs(5, 8)
    r = np.random.default_rng(9).normal(size=(8, 3))

    def loss(prm):
        pts, _ = refine_forward(joined, coords, prm, enable, 3, groups=2)
        return T.total(T.hadamard(pts, T.Tensor(r)))

    assert small.dict_grad_check(loss, p) < 1e-4
    # and with respect to the joined input features
    proj = lambda t: T.total(T.hadamard(refine_forward(t, coords, p, enable, 3, groups=2)[0], T.Tensor(r)))  # noqa: E731
    assert grad_check(proj, joined) < 1e-4


def test_stage_one_forward_never_reads_density_parameters():
    p = params_for(6, density=False)
    coords, joined = inputs(6, 5)
    pts, _ = refine_forward(joined, coords, p, False)
    assert pts.shape == (5, 3)
    with pytest.raises(KeyError):
        refine_forward(joined, coords, p, True)


def test_width_errors():
    p = params_for(7)
    with pytest.raises(DimensionError):
        trunk(np.zeros((3, CFG.in_dim + 1)), p)
    with pytest.raises(DimensionError):
        predict_offsets(np.zeros((3, 2)), p)
