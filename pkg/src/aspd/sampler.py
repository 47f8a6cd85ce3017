"""The full sample-to-refine sampler, plus FPS / RS baselines with the same interface.

Every sampler exposes sample_batch(clouds (b, n, 3), m, keys) -> (b, m, 3).
`keys` identify clouds so that random choices are reproducible per cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import geometry
from .errors import CheckpointError, ConfigError, ContractError
from .presampling import EmbedConfig, adaptive_k, embed_features, init_embedder, select
from .refinement import DENSITY_PREFIXES, RefineConfig, init_density, init_refiner, refine_forward
from .tensor import Tensor, concat_cols, reshape


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


@dataclass(frozen=True)
class SamplerConfig:
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    density_attention: bool = True
    presampler: str = "fps"

    def __post_init__(self):
        if self.presampler not in ("fps", "rs"):
            raise ConfigError(f"unknown pre-sampler {self.presampler!r}")
        if self.refine.in_dim != self.embed.out_dim + 3:
            raise ConfigError("refiner input width must be embedding width + 3")

    def to_meta(self) -> dict:
        meta = {"density_attention": str(int(self.density_attention)), "presampler": self.presampler}
        for prefix, sub in (("embed", self.embed), ("refine", self.refine)):
            for f in fields(sub):
                v = getattr(sub, f.name)
                meta[f"{prefix}.{f.name}"] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        return meta

    @classmethod
    def from_meta(cls, meta: dict) -> SamplerConfig:
        try:
            parts = {}
            for prefix, kind in (("embed", EmbedConfig), ("refine", RefineConfig)):
                kw = {}
                for f in fields(kind):
                    raw = meta[f"{prefix}.{f.name}"]
                    kw[f.name] = _ints(raw) if isinstance(f.default, tuple) else int(raw)
                parts[prefix] = kind(**kw)
            return cls(parts["embed"], parts["refine"], meta["density_attention"] == "1", meta["presampler"])
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"sampler config incomplete or malformed: {exc}") from exc


@dataclass
class ForwardOut:
    points: Tensor  # S, (b*m, 3)
    offsets: Tensor  # dS, (b*m, 3)
    coords: np.ndarray  # S', (b*m, 3)
    indices: np.ndarray  # (b, m) row indices into each cloud


def _check_batch(clouds, m):
    clouds = np.ascontiguousarray(clouds, dtype=np.float64)
    if clouds.ndim != 3 or clouds.shape[2] != 3:
        raise ContractError(f"expected (b, n, 3) clouds, got {clouds.shape}")
    if not 1 <= m < clouds.shape[1]:
        raise ContractError(f"need 1 <= m < n, got m={m}, n={clouds.shape[1]}")
    return clouds


class LearnedSampler:
    """Embedding + pre-sampler + offset refinement, over a parameter dict."""

    name = "as-pd"

    def __init__(self, config: SamplerConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def fresh(cls, config: SamplerConfig = SamplerConfig(), seed: int = 0) -> LearnedSampler:
        rng = np.random.default_rng(seed)
        params = init_embedder(config.embed, rng)
        params.update(init_refiner(config.refine, rng, density=config.density_attention))
        return cls(config, params)

    def with_density_attention(self, seed: int) -> LearnedSampler:
        """Copy with freshly initialised density/attention weights switched on."""
        params = {k: v for k, v in self.params.items() if not k.startswith(DENSITY_PREFIXES)}
        params.update(init_density(self.config.refine, np.random.default_rng(seed)))
        cfg = SamplerConfig(self.config.embed, self.config.refine, True, self.config.presampler)
        return LearnedSampler(cfg, params)

    def neighbour_k(self, n: int) -> int:
        return adaptive_k(n, self.config.embed.n0, self.config.embed.k0)

    def select(self, clouds, m, starts=None, rng_keys=None) -> np.ndarray:
        b, n, _ = clouds.shape
        out = np.empty((b, m), dtype=np.int64)
        for i in range(b):
            if self.config.presampler == "fps":
                out[i] = select(clouds[i], m, "fps", start=0 if starts is None else int(starts[i]))
            else:
                key = i if rng_keys is None else rng_keys[i]
                out[i] = select(clouds[i], m, "rs", seed=np.random.default_rng(key))
        return out

    def forward(self, params, clouds, m: int, starts=None, rng_keys=None, graph=None, k=None) -> ForwardOut:
        """Batched forward pass. `params` values may be tracked Tensors.

        `graph` is an optional precomputed (b*n, k) neighbour index matrix.
        """
        clouds = _check_batch(clouds, m)
        b, n, _ = clouds.shape
        if graph is None:
            graph = geometry.knn_batched(clouds, k or self.neighbour_k(n))
        idx = self.select(clouds, m, starts, rng_keys)
        rows = (idx + (np.arange(b) * n)[:, None]).ravel()
        stacked = clouds.reshape(b * n, 3)
        feats = embed_features(stacked, graph, params, rows=rows)
        coords = stacked[rows]
        joined = concat_cols(coords, feats)
        pts, offsets = refine_forward(joined, coords, params, self.config.density_attention,
                                      self.config.refine.k_d, groups=b)
        return ForwardOut(pts, offsets, coords, idx)

    def sample_batch(self, clouds, m: int, keys=None) -> np.ndarray:
        clouds = _check_batch(clouds, m)
        out = self.forward(self.params, clouds, m, starts=None, rng_keys=keys)
        return out.points.data.reshape(len(clouds), m, 3)

    def sample(self, points, m: int, start: int = 0) -> np.ndarray:
        points = geometry.as_points(points)
        out = self.forward(self.params, points[None], m, starts=[start], rng_keys=[0])
        return out.points.data


class FPSSampler:
    name = "fps"

    def __init__(self, start: int = 0):
        self.start = start

    def sample_batch(self, clouds, m, keys=None):
        clouds = np.asarray(clouds, dtype=np.float64)
        return np.stack([c[geometry.fps(c, m, self.start)] for c in clouds])


class RandomSampler:
    name = "rs"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def sample_batch(self, clouds, m, keys=None):
        clouds = np.asarray(clouds, dtype=np.float64)
        keys = range(len(clouds)) if keys is None else keys
        return np.stack([c[geometry.random_sample(c, m, np.random.default_rng((self.seed, int(key))))]
                         for c, key in zip(clouds, keys)])


def stage_points(out: ForwardOut, b: int, m: int) -> Tensor:
    """The refined points of a forward pass as a (b, m, 3) tensor."""
    return reshape(out.points, (b, m, 3))
