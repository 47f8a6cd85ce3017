"""Training losses and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from . import _kernels
from .errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, _emit, as_tensor, weighted_sum


@dataclass(frozen=True)
class LossWeights:
    task: float = 0.5  # lambda
    conf: float = 10.0  # alpha
    off: float = 1.0  # beta

    def __post_init__(self):
        vals = (self.task, self.conf, self.off)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ContractError(f"loss weights must be finite and nonnegative: {vals}")
        if not any(vals):
            raise ContractError("at least one loss weight must be nonzero")


CLASSIFICATION_WEIGHTS = LossWeights(0.5, 10.0, 1.0)
REGISTRATION_WEIGHTS = LossWeights(100.0, 10.0, 1.0)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class over a batch.

    `logits` is (b, N) or (N,); `labels` is a class index or length-b array.
    """
    logits = as_tensor(logits)
    squeeze = logits.data.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data
    labels = np.atleast_1d(np.asarray(labels))
    b, n = z.shape
    if labels.shape != (b,) or not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"cross_entropy: need {b} integer labels")
    if labels.min() < 0 or labels.max() >= n:
        raise ContractError(f"cross_entropy: label outside [0, {n})")
    logp = log_softmax(z, axis=1)
    rows = np.arange(b)
    out = np.array(-logp[rows, labels].mean())

    def back(g, needs):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        d *= float(g) / b
        return (d[0] if squeeze else d,)

    return _emit("cross_entropy", [logits], out, back)


def cross_entropy_probs(probs, label: int) -> float:
    """-log p[label] for an explicit probability vector (the one-hot target form)."""
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1.0) > 1e-6 or probs.min() < 0:
        raise ContractError("probabilities must be nonnegative and sum to 1")
    if not 0 <= label < probs.size:
        raise ContractError(f"label {label} outside [0, {probs.size})")
    with np.errstate(divide="ignore"):
        return float(-np.log(probs[label]))


def _batched(x: Tensor, name: str) -> np.ndarray:
    d = x.data
    if d.ndim == 2:
        d = d[None]
    if d.ndim != 3 or d.shape[2] != 3:
        raise DimensionError(f"{name}: expected (n, 3) or (b, n, 3), got {x.shape}")
    if d.shape[1] < 1:
        raise ContractError(f"{name}: empty point set")
    return d


def conformity_loss(p, s) -> Tensor:
    """Chamfer distance with squared distances, averaged over the batch.

    Accepts single clouds (n, 3)/(m, 3) or batches (b, n, 3)/(b, m, 3).
    Gradients flow to both arguments.
    """
    p, s = as_tensor(p), as_tensor(s)
    pd, sd = _batched(p, "P"), _batched(s, "S")
    if pd.shape[0] != sd.shape[0]:
        raise DimensionError("conformity_loss: batch sizes differ")
    b, n, m = pd.shape[0], pd.shape[1], sd.shape[1]
    pairs = []
    val = 0.0
    for i in range(b):
        pi, si = np.ascontiguousarray(pd[i]), np.ascontiguousarray(sd[i])
        j_sp, d_sp = _kernels.nearest(si, pi)
        j_ps, d_ps = _kernels.nearest(pi, si)
        val += d_sp.mean() + d_ps.mean()
        pairs.append((j_sp, j_ps))
    out = np.array(val / b)

    def back(g, needs):
        w = float(g) / b
        gp = np.zeros_like(pd)
        gs = np.zeros_like(sd)
        for i, (j_sp, j_ps) in enumerate(pairs):
            r_sp = sd[i] - pd[i][j_sp]  # s - nearest p
            r_ps = pd[i] - sd[i][j_ps]  # p - nearest s
            gs[i] += (2.0 * w / m) * r_sp
            gp[i] += _kernels.scatter_rows(j_sp, (-2.0 * w / m) * r_sp, n)
            gp[i] += (2.0 * w / n) * r_ps
            gs[i] += _kernels.scatter_rows(j_ps, (-2.0 * w / n) * r_ps, m)
        return gp.reshape(p.shape), gs.reshape(s.shape)

    return _emit("conformity_loss", [p, s], out, back)


def offset_loss(base, moved) -> Tensor:
    """Mean Euclidean length of the per-row displacement moved - base.

    The value is exact; the gradient uses sqrt(|d|^2 + 1e-12) so that a
    zero-length displacement has zero gradient.
    """
    base, moved = as_tensor(base), as_tensor(moved)
    if base.shape != moved.shape:
        raise DimensionError(f"offset_loss: {base.shape} vs {moved.shape}")
    d = (moved.data - base.data).reshape(-1, 3)
    sq = (d * d).sum(axis=1)
    rows = d.shape[0]
    out = np.array(np.sqrt(sq).mean())

    def back(g, needs):
        gm = (float(g) / rows) * d / np.sqrt(sq + 1e-12)[:, None]
        gm = gm.reshape(moved.shape)
        return -gm, gm

    return _emit("offset_loss", [base, moved], out, back)


def compound_loss(task, conf, off, w: LossWeights) -> Tensor:
    """lambda * task + alpha * conf + beta * off."""
    terms = [as_tensor(task), as_tensor(conf), as_tensor(off)]
    for t in terms:
        if not np.all(np.isfinite(t.data)):
            raise NumericError("compound_loss: non-finite term")
    return weighted_sum(list(zip((w.task, w.conf, w.off), terms)))


def check_rotation(r, name="R", tol=1e-6) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ContractError(f"{name}: expected 3x3, got {r.shape}")
    if np.abs(r.T @ r - np.eye(3)).max() > tol or abs(np.linalg.det(r) - 1.0) > tol:
        raise ContractError(f"{name}: not a proper rotation")
    return r


def rotation_term(r_pred, r_gt) -> float:
    """||R_pred^-1 R_gt - I||_F^2; the inverse of a rotation is its transpose."""
    r_pred = check_rotation(r_pred, "R_pred")
    r_gt = check_rotation(r_gt, "R_gt")
    a = r_pred.T @ r_gt - np.eye(3)
    return float((a * a).sum())


def registration_task_loss(source, template, r_pred, r_gt) -> float:
    """Unsupervised Chamfer term plus the supervised rotation term."""
    from .geometry import chamfer

    return chamfer(source, template) + rotation_term(r_pred, r_gt)


def _unit_quaternion(q, name) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,) or abs(np.linalg.norm(q) - 1.0) > 1e-9:
        raise ContractError(f"{name}: expected a unit quaternion (w, x, y, z)")
    return q


def rotation_error(q_pred, q_gt, geodesic: bool = False) -> float:
    """Rotation error in degrees: 2 * arccos(2 <q_pred, q_gt>^2 - 1).

    With geodesic=True the leading factor 2 is dropped, which gives the usual
    angle of the relative rotation.
    """
    a = _unit_quaternion(q_pred, "q_pred")
    b = _unit_quaternion(q_gt, "q_gt")
    x = float(np.clip(2.0 * float(a @ b) ** 2 - 1.0, -1.0, 1.0))
    angle = math.acos(x)
    if not geodesic:
        angle *= 2.0
    return math.degrees(angle)


def mean_rotation_error(pairs: Sequence, geodesic: bool = False) -> float:
    if len(pairs) == 0:
        raise ContractError("mean_rotation_error: no pairs")
    return float(np.mean([rotation_error(a, b, geodesic) for a, b in pairs]))


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ContractError(f"accuracy: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ContractError("accuracy: no predictions")
    return float((predictions == labels).mean())
