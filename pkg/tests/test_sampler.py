import numpy as np
import pytest

import small
from aspd import geometry
from aspd import tensor as T
from aspd.errors import CheckpointError, ConfigError, ContractError
from aspd.objectives import CLASSIFICATION_WEIGHTS, compound_loss, conformity_loss, cross_entropy, offset_loss
from aspd.refinement import DENSITY_PREFIXES
from aspd.sampler import FPSSampler, LearnedSampler, RandomSampler, SamplerConfig, stage_points
from aspd.taskheads import classify_forward


def clouds(seed=0, b=3, n=16):
    return np.random.default_rng(seed).normal(size=(b, n, 3))


def test_fresh_sampler_reproduces_fps_exactly():
    s = LearnedSampler.fresh(small.SAMPLER, 0)
    c = clouds(n=20)
    for m in (1, 5, 19):
        np.testing.assert_array_equal(s.sample_batch(c, m), FPSSampler().sample_batch(c, m))


def test_batched_forward_equals_per_cloud():
    s = small.sampler(1)
    c = clouds(1)
    batch = s.sample_batch(c, 6)
    for i in range(3):
        np.testing.assert_allclose(batch[i], s.sample(c[i], 6), atol=1e-12)


def test_output_sizes_and_start_index():
    s = small.sampler(2)
    c = clouds(2, b=1, n=30)[0]
    for m in (1, 2, 7, 29):
        assert s.sample(c, m).shape == (m, 3)
    out = s.forward(s.params, c[None], 4, starts=[5])
    np.testing.assert_array_equal(out.indices[0], geometry.fps(c, 4, 5))
    np.testing.assert_array_equal(out.coords, c[out.indices[0]])


def test_random_presampler_is_keyed_per_cloud():
    cfg = SamplerConfig(small.EMBED, small.REFINE, True, "rs")
    s = LearnedSampler.fresh(cfg, 0)
    c = clouds(3)
    a = s.forward(s.params, c, 5, rng_keys=[7, 8, 9]).indices
    b = s.forward(s.params, c[1:], 5, rng_keys=[8, 9]).indices
    np.testing.assert_array_equal(a[1:], b)


def test_contract_errors():
    s = small.sampler(0)
    with pytest.raises(ContractError):
        s.sample_batch(clouds(), 16)
    with pytest.raises(ContractError):
        s.sample_batch(np.zeros((2, 5)), 2)
    with pytest.raises(ConfigError):
        SamplerConfig(presampler="grid")


def test_with_density_attention_replaces_only_density_weights():
    s = LearnedSampler.fresh(SamplerConfig(small.EMBED, small.REFINE, False), 0)
    assert not any(k.startswith(DENSITY_PREFIXES) for k in s.params)
    s2 = s.with_density_attention(5)
    assert s2.config.density_attention
    for k, v in s.params.items():
        assert s2.params[k] is v
    assert any(k.startswith(DENSITY_PREFIXES) for k in s2.params)


def test_meta_round_trip():
    cfg = SamplerConfig(small.EMBED, small.REFINE, False, "rs")
    assert SamplerConfig.from_meta(cfg.to_meta()) == cfg
    with pytest.raises(CheckpointError):
        SamplerConfig.from_meta({"presampler": "fps"})


def test_baselines():
    c = clouds(4, n=12)
    np.testing.assert_array_equal(FPSSampler(3).sample_batch(c, 4)[0], c[0][geometry.fps(c[0], 4, 3)])
    a = RandomSampler(1).sample_batch(c, 4, keys=[0, 1, 2])
    np.testing.assert_array_equal(a, RandomSampler(1).sample_batch(c, 4, keys=[0, 1, 2]))
    assert not np.array_equal(a, RandomSampler(2).sample_batch(c, 4, keys=[0, 1, 2]))


@pytest.mark.parametrize("density", [False, True])
def test_composed_sampler_and_classifier_gradients(density):
    s = small.sampler(6, density)
    task = small.pointnet(6)
    c = clouds(6, b=2, n=12)
    labels = np.array([1, 2])

    def loss(prm):
        out = s.forward(prm, c, 5, starts=[0, 3])
        pts = stage_points(out, 2, 5)
        return compound_loss(cross_entropy(classify_forward(pts, task), labels), conformity_loss(c, pts),
                             offset_loss(out.coords, out.points), CLASSIFICATION_WEIGHTS)

    assert small.dict_grad_check(loss, s.params) < 1e-4


def test_stage_one_graph_has_no_density_gradients():
    s = small.sampler(7, density=False)
    tape = T.Tape()
    tp = tape.watch_all(s.params)
    out = s.forward(tp, clouds(7), 4)
    grads = T.backward(tape, T.total(out.points))
    assert set(grads) == set(s.params)
    assert not any(k.startswith(DENSITY_PREFIXES) for k in grads)
