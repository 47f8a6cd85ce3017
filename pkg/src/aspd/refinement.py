"""Offset refining block: point-wise trunk, density attention, offset head.

All functions take a stacked batch of `groups` clouds with the same number of
points m, laid out as (groups * m, ...) rows. groups=1 is a single cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ContractError, DimensionError
from .nn import init_linear, layer_count
from .tensor import (
    Tensor,
    activation,
    add,
    as_tensor,
    concat_cols,
    dense_group_max,
    gather_sub_relu,
    hadamard,
    linear,
    reduce_group,
    relu,
    repeat_rows,
    reshape,
    slice_rows,
)

DENSITY_PREFIXES = ("refine.dens", "refine.att")


@dataclass(frozen=True)
class RefineConfig:
    in_dim: int = 131
    trunk: tuple = (128, 128)
    density: tuple = (64, 64)
    attention_hidden: int = 128
    proj_hidden: int = 64
    k_d: int = 16

    @property
    def c1(self) -> int:
        return self.trunk[-1]

    @property
    def c2(self) -> int:
        return self.density[-1]


def init_refiner(cfg: RefineConfig, rng: np.random.Generator, density: bool = True) -> dict:
    p = {}
    c = cfg.in_dim
    for i, w in enumerate(cfg.trunk):
        p[f"refine.trunk{i}.w"], p[f"refine.trunk{i}.b"] = init_linear(rng, c, w)
        c = w
    p["refine.proj0.w"], p["refine.proj0.b"] = init_linear(rng, cfg.c1, cfg.proj_hidden)
    # zero final layer: an untrained refiner returns the pre-sampled points
    p["refine.proj1.w"] = np.zeros((cfg.proj_hidden, 3))
    p["refine.proj1.b"] = np.zeros(3)
    if density:
        p.update(init_density(cfg, rng))
    return p


def init_density(cfg: RefineConfig, rng: np.random.Generator) -> dict:
    p = {}
    c = 3 + cfg.in_dim
    for i, w in enumerate(cfg.density):
        p[f"refine.dens{i}.w"], p[f"refine.dens{i}.b"] = init_linear(rng, c, w)
        c = w
    p["refine.att0.w"], p["refine.att0.b"] = init_linear(rng, cfg.c1 + cfg.c2, cfg.attention_hidden)
    p["refine.att1.w"], p["refine.att1.b"] = init_linear(rng, cfg.attention_hidden, cfg.c1)
    return p


def _stack(x, prefix, count, params, final_act=True):
    for i in range(count):
        x = linear(x, params[f"{prefix}{i}.w"], params[f"{prefix}{i}.b"])
        if final_act or i < count - 1:
            x = relu(x)
    return x


def trunk(joined, params: dict) -> Tensor:
    joined = as_tensor(joined)
    w0 = params["refine.trunk0.w"]
    width = w0.shape[0]
    if joined.data.ndim != 2 or joined.shape[1] != width:
        raise DimensionError(f"trunk: expected width {width}, got {joined.shape}")
    return _stack(joined, "refine.trunk", layer_count(params, "refine.trunk"), params)


def density_embedding(coords, joined, k_d: int, params: dict, groups: int = 1) -> Tensor:
    """Max-pooled local features over each point's k_d nearest pre-sampled neighbours.

    Per neighbour j of i the input is concat(s_j - s_i, SF'_j). The first
    layer is split as s_j W_rel + SF'_j W_feat + b - s_i W_rel so that the
    neighbour term is computed once per point rather than once per edge.
    """
    coords = np.asarray(coords.data if isinstance(coords, Tensor) else coords, dtype=np.float64)
    joined = as_tensor(joined)
    rows = coords.shape[0]
    if joined.shape[0] != rows or rows % groups:
        raise DimensionError("density_embedding: row counts disagree")
    m = rows // groups
    if not 1 <= k_d <= m:
        raise ContractError(f"density_embedding: k_d={k_d} outside [1, {m}]")
    nbr = geometry.knn_batched(coords.reshape(groups, m, 3), k_d)
    w0 = params["refine.dens0.w"]
    w_rel = slice_rows(w0, 0, 3)
    w_feat = slice_rows(w0, 3, as_tensor(w0).shape[0])
    centre = linear(coords, w_rel)
    per_point = linear(joined, w_feat, params["refine.dens0.b"])
    per_point = add(per_point, centre)
    flat = gather_sub_relu(per_point, centre, nbr)
    layers = layer_count(params, "refine.dens")
    if layers == 1:
        return reduce_group(reshape(flat, (rows, k_d, flat.shape[1])), "max")
    for i in range(1, layers - 1):
        flat = relu(linear(flat, params[f"refine.dens{i}.w"], params[f"refine.dens{i}.b"]))
    last = layers - 1
    return dense_group_max(flat, params[f"refine.dens{last}.w"], params[f"refine.dens{last}.b"], k_d)


def channel_attention(e, ebar, params: dict, groups: int = 1) -> tuple[Tensor, Tensor]:
    """Per-cloud channel gate W (rows, c1) in (0, 1), and E' = E * W."""
    e, ebar = as_tensor(e), as_tensor(ebar)
    if e.shape[0] != ebar.shape[0]:
        raise DimensionError(f"channel_attention: {e.shape} vs {ebar.shape}")
    rows, c1 = e.shape
    m = rows // groups
    cat = concat_cols(e, ebar)
    pooled = reduce_group(reshape(cat, (groups, m, cat.shape[1])), "mean")
    hidden = relu(linear(pooled, params["refine.att0.w"], params["refine.att0.b"]))
    gate = activation(linear(hidden, params["refine.att1.w"], params["refine.att1.b"]), "sigmoid")
    w = repeat_rows(gate, m)
    return w, hadamard(e, w)


def predict_offsets(e2, params: dict) -> Tensor:
    e2 = as_tensor(e2)
    width = as_tensor(params["refine.proj0.w"]).shape[0]
    if e2.data.ndim != 2 or e2.shape[1] != width:
        raise DimensionError(f"predict_offsets: expected width {width}, got {e2.shape}")
    return _stack(e2, "refine.proj", layer_count(params, "refine.proj"), params, final_act=False)


def refine_forward(joined, coords, params: dict, enable_density_attention: bool, k_d: int = 16,
                   groups: int = 1) -> tuple[Tensor, Tensor]:
    """Refined points S = S' + dS and the offsets dS, both (rows, 3).

    k_d is capped at the per-cloud point count so tiny sample sizes still work.
    """
    coords = np.asarray(coords, dtype=np.float64)
    e = trunk(joined, params)
    if enable_density_attention:
        m = coords.shape[0] // groups
        ebar = density_embedding(coords, joined, min(k_d, m), params, groups)
        _, e = channel_attention(e, ebar, params, groups)
    offsets = predict_offsets(e, params)
    return geometry.apply_offsets(coords, offsets), offsets
