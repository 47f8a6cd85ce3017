"""Feature embedding (a static-graph DGCNN variant) and heuristic pre-sampling.

Each edge convolution maps concat(f_i, f_j - f_i) through one linear+relu
layer and max-pools over the k neighbours of i. The neighbour graph is built
once on coordinates and shared by all layers. The per-layer outputs are
concatenated and fused point-wise to `out_dim` channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ConfigError, ContractError
from .nn import init_linear, layer_count
from .tensor import (
    Tensor,
    as_tensor,
    concat_cols,
    edge_max,
    linear,
    relu,
    slice_rows,
    sub,
    take_rows,
)


@dataclass(frozen=True)
class EmbedConfig:
    widths: tuple = (64, 64, 128)
    out_dim: int = 128
    k0: int = 40
    n0: int = 1024


def init_embedder(cfg: EmbedConfig, rng: np.random.Generator) -> dict:
    params = {}
    c_in = 3
    for i, w in enumerate(cfg.widths):
        params[f"embed.ec{i}.w"], params[f"embed.ec{i}.b"] = init_linear(rng, 2 * c_in, w)
        c_in = w
    params["embed.fuse.w"], params["embed.fuse.b"] = init_linear(rng, sum(cfg.widths), cfg.out_dim)
    return params


def edgeconv_layer(f, nbr_idx, w, b, rows=None) -> Tensor:
    """max over j in N(i) of relu(concat(f_i, f_j - f_i) @ w + b).

    `w` is (2 * c_in, c_out). With `rows`, only those output rows are computed.
    Evaluated as relu(f_i @ (w_top - w_bot) + b + max_j f_j @ w_bot), which is
    the same function because relu and the shift by the centre term are
    monotone.
    """
    f, w = as_tensor(f), as_tensor(w)
    c_in = f.shape[1]
    if w.shape[0] != 2 * c_in:
        raise ContractError(f"edgeconv: weight rows {w.shape[0]} != 2 * {c_in}")
    w_self = slice_rows(w, 0, c_in)
    w_nbr = slice_rows(w, c_in, 2 * c_in)
    nbr_idx = np.asarray(nbr_idx)
    if rows is not None:
        centre = take_rows(f, rows)
        nbr_idx = nbr_idx[np.asarray(rows)]
    else:
        centre = f
    return edge_max(linear(centre, sub(w_self, w_nbr), b), linear(f, w_nbr), nbr_idx)


def embed_features(points, nbr_idx, params: dict, rows=None) -> Tensor:
    """Embedding of (N, 3) points over a fixed (N, k) neighbour graph.

    `rows` restricts the output (and the last layer's work) to those points;
    the fusion layer is point-wise so this equals taking rows of the full map.
    """
    layers = layer_count(params, "embed.ec")
    if layers == 0:
        raise ConfigError("no embedding layers in params")
    h = as_tensor(points)
    outs = []
    for i in range(layers):
        last = i == layers - 1
        h = edgeconv_layer(h, nbr_idx, params[f"embed.ec{i}.w"], params[f"embed.ec{i}.b"], rows if last else None)
        outs.append(h)
    if rows is not None:
        outs = [take_rows(o, rows) for o in outs[:-1]] + [outs[-1]]
    cat = outs[0]
    for o in outs[1:]:
        cat = concat_cols(cat, o)
    return relu(linear(cat, params["embed.fuse.w"], params["embed.fuse.b"]))


def embed(points, k: int, params: dict) -> Tensor:
    """Per-point features (n, out_dim) for a single cloud."""
    pts = points.data if isinstance(points, Tensor) else points
    pts = geometry.as_points(pts)
    if not 1 <= k <= pts.shape[0]:
        raise ContractError(f"embed: k={k} outside [1, {pts.shape[0]}]")
    return embed_features(pts, geometry.knn(pts, pts, k), params)


@dataclass
class PreSampleOutput:
    coords: np.ndarray  # S' (m, 3), exact rows of P
    features: Tensor  # F' (m, c)
    joined: Tensor  # SF' (m, c + 3)
    indices: np.ndarray  # I (m,)


def select(points, m: int, method: str = "fps", start: int = 0, seed=0) -> np.ndarray:
    if method == "fps":
        return geometry.fps(points, m, start)
    if method == "rs":
        return geometry.random_sample(points, m, seed)
    raise ConfigError(f"unknown pre-sampler {method!r}")


def presample(points, features, m: int, method: str = "fps", start: int = 0, seed=0) -> PreSampleOutput:
    points = geometry.as_points(points)
    n = points.shape[0]
    if not 1 <= m < n:
        raise ContractError(f"presample: need 1 <= m < n, got m={m}, n={n}")
    idx = select(points, m, method, start, seed)
    coords = points[idx]
    feats = take_rows(features, idx)
    return PreSampleOutput(coords, feats, concat_cols(coords, feats), idx)


def adaptive_k(n: int, n0: int = 1024, k0: int = 40) -> int:
    """Neighbourhood size scaled with input size: round(k0 * n / n0), clamped to [4, n]."""
    if min(n, n0, k0) < 1:
        raise ContractError("adaptive_k: arguments must be >= 1")
    k = int(np.floor(k0 * n / n0 + 0.5))
    return max(min(k, n), min(4, n))
