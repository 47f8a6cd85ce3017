"""Point-set kernels: k-NN, farthest point sampling, random sampling, and
Chamfer / Hausdorff distances. Points are (n, 3) float arrays."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, add


def as_points(p, name="points") -> np.ndarray:
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise DimensionError(f"{name}: expected (n, 3), got {p.shape}")
    if p.shape[0] < 1:
        raise ContractError(f"{name}: empty point set")
    if not np.all(np.isfinite(p)):
        raise NumericError(f"{name}: non-finite coordinates")
    return p


def knn(queries, reference, k: int) -> np.ndarray:
    """(q, k) indices of the k nearest reference points, nearest first.

    Distances are squared Euclidean; ties go to the lower index. A query that
    is also a reference point finds itself first.
    """
    queries = as_points(queries, "queries")
    reference = as_points(reference, "reference")
    if not 1 <= k <= reference.shape[0]:
        raise ContractError(f"knn: k={k} outside [1, {reference.shape[0]}]")
    return _kernels.knn(queries, reference, int(k))


def knn_batched(points, k: int) -> np.ndarray:
    """Self k-NN for (b, n, 3) clouds, returned as (b*n, k) row indices into the stacked (b*n, 3) array."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    b, n, _ = points.shape
    if not 1 <= k <= n:
        raise ContractError(f"knn: k={k} outside [1, {n}]")
    return _kernels.knn_blocks(points.reshape(b * n, 3), n, int(k))


def fps(points, m: int, start: int = 0) -> np.ndarray:
    """Farthest point sampling: m distinct indices in selection order."""
    points = as_points(points)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise ContractError(f"fps: m={m} outside [1, {n}]")
    if not 0 <= start < n:
        raise ContractError(f"fps: start={start} outside [0, {n})")
    return _kernels.fps(points, int(m), int(start))


def random_sample(points, m: int, seed) -> np.ndarray:
    """m distinct indices drawn without replacement. `seed` may be an int or a Generator."""
    n = as_points(points).shape[0]
    if not 1 <= m <= n:
        raise ContractError(f"random_sample: m={m} outside [1, {n}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.permutation(n)[:m].astype(np.int64)


def directed_nearest(a, b) -> tuple[np.ndarray, np.ndarray]:
    """For each row of a, the index of and squared distance to its nearest row of b."""
    return _kernels.nearest(as_points(a), as_points(b))


def chamfer(p, s) -> float:
    """Mean squared nearest-neighbour distance, summed over both directions."""
    p, s = as_points(p, "P"), as_points(s, "S")
    _, d_sp = _kernels.nearest(s, p)
    _, d_ps = _kernels.nearest(p, s)
    return float(d_sp.mean() + d_ps.mean())


def hausdorff(p, s) -> float:
    p, s = as_points(p, "P"), as_points(s, "S")
    _, d_sp = _kernels.nearest(s, p)
    _, d_ps = _kernels.nearest(p, s)
    return float(np.sqrt(max(d_sp.max(), d_ps.max())))


def normalize_unit_sphere(p) -> np.ndarray:
    """Center on the centroid and scale so the farthest point has norm 1."""
    p = as_points(p)
    q = p - p.mean(axis=0)
    r = np.sqrt((q * q).sum(axis=1)).max()
    if r == 0.0:
        return np.zeros_like(q)
    return q / r


def apply_offsets(base, offsets) -> Tensor:
    """S = S' + dS; differentiable in both arguments."""
    return add(base, offsets)
