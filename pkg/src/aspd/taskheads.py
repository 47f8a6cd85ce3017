"""PointNet-vanilla classifier used as the frozen downstream task network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .nn import init_linear, layer_count
from .objectives import accuracy
from .tensor import Tensor, as_tensor, dense_group_max, linear, relu, reshape

MODEL1_WIDTHS = (64, 64, 128, 1024)
MODEL3_WIDTHS = (64, 256, 256, 1024)


@dataclass(frozen=True)
class PointNetConfig:
    widths: tuple = MODEL1_WIDTHS
    head: tuple = (512, 256)
    classes: int = 6
    init: str = "he"


def init_pointnet(cfg: PointNetConfig, rng: np.random.Generator) -> dict:
    p = {}
    c = 3
    for i, w in enumerate(cfg.widths):
        p[f"task.pw{i}.w"], p[f"task.pw{i}.b"] = init_linear(rng, c, w, cfg.init)
        c = w
    for i, w in enumerate(tuple(cfg.head) + (cfg.classes,)):
        p[f"task.fc{i}.w"], p[f"task.fc{i}.b"] = init_linear(rng, c, w, cfg.init)
        c = w
    return p


def classify_forward(points, params: dict) -> Tensor:
    """Logits (classes,) for one (m, 3) cloud, or (b, classes) for (b, m, 3) clouds."""
    points = as_tensor(points)
    single = points.data.ndim == 2
    if single:
        points = reshape(points, (1,) + points.shape)
    if points.data.ndim != 3 or points.shape[2] != 3:
        raise DimensionError(f"classify_forward: expected (b, m, 3), got {points.shape}")
    b, m, _ = points.shape
    if m < 1:
        raise ContractError("classify_forward: empty cloud")
    h = reshape(points, (b * m, 3))
    layers = layer_count(params, "task.pw")
    for i in range(layers - 1):
        h = relu(linear(h, params[f"task.pw{i}.w"], params[f"task.pw{i}.b"]))
    # last point-wise layer fused with the global max pool
    last = layers - 1
    h = dense_group_max(h, params[f"task.pw{last}.w"], params[f"task.pw{last}.b"], m)
    fc = layer_count(params, "task.fc")
    for i in range(fc):
        h = linear(h, params[f"task.fc{i}.w"], params[f"task.fc{i}.b"])
        if i < fc - 1:
            h = relu(h)
    return reshape(h, (h.shape[1],)) if single else h


def predict(params: dict, clouds: np.ndarray, batch: int = 64) -> np.ndarray:
    """Argmax class for each of the (b, m, 3) clouds."""
    out = []
    for i in range(0, len(clouds), batch):
        out.append(np.argmax(classify_forward(clouds[i:i + batch], params).data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def pointwise_widths(params: dict) -> tuple:
    return tuple(params[f"task.pw{i}.w"].shape[1] for i in range(layer_count(params, "task.pw")))


def accuracy_eval(params: dict, clouds, labels, sampler=None, m: int | None = None, keys=None,
                  batch: int = 64) -> float:
    """Fraction of clouds classified correctly, optionally after downsampling to m points.

    `sampler` is anything with sample_batch(clouds, m, keys) -> (b, m, 3).
    """
    clouds = np.asarray(clouds, dtype=np.float64)
    labels = np.asarray(labels)
    if len(clouds) == 0:
        raise ContractError("accuracy_eval: empty dataset")
    if sampler is not None:
        if m is None:
            raise ContractError("accuracy_eval: a sampler needs m")
        keys = np.arange(len(clouds)) if keys is None else np.asarray(keys)
        parts = [sampler.sample_batch(clouds[i:i + batch], m, keys[i:i + batch])
                 for i in range(0, len(clouds), batch)]
        clouds = np.concatenate(parts)
    return accuracy(predict(params, clouds, batch), labels)
