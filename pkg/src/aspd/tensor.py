"""Dense float64 arrays with a define-by-run tape for reverse-mode gradients.

Only the operations the sampler and task network need are provided. There is
no broadcasting beyond what each op documents.

    tape = Tape()
    w = tape.watch(np.ones((3, 2)), name="w")
    loss = total(linear(x, w))
    grads = backward(tape, loss)   # {"w": ndarray}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    GatherIndexError,
    NumericError,
    TapeError,
)


class Tensor:
    """An immutable array, optionally bound to a node on a Tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"


@dataclass
class Record:
    op: str
    inputs: tuple[int | None, ...]
    output: int
    # backward(upstream, needs) -> one gradient (or None) per input
    backward: Callable


class Tape:
    def __init__(self):
        self.records: list[Record] = []
        self.shapes: list[tuple[int, ...]] = []
        self.leaves: dict[int, str | int] = {}
        self.released = False

    def _new_node(self, shape) -> int:
        self.shapes.append(tuple(shape))
        return len(self.shapes) - 1

    def watch(self, array, name: str | None = None) -> Tensor:
        """Register `array` as a leaf whose gradient backward() will report."""
        t = as_tensor(np.array(array, dtype=np.float64))
        t.tape = self
        t.node = self._new_node(t.shape)
        self.leaves[t.node] = name if name is not None else t.node
        return t

    def watch_all(self, params: dict[str, np.ndarray], prefix: str = "") -> dict[str, Tensor]:
        return {k: self.watch(v, prefix + k) for k, v in params.items()}

    def record(self, op: str, inputs: Sequence[Tensor], out: np.ndarray, backward) -> Tensor:
        if self.released:
            raise TapeError("tape was released by backward(); start a new Tape")
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        node = self._new_node(out.shape)
        self.records.append(Record(op, ids, node, backward))
        return Tensor(out, self, node)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    t = Tensor(x)
    if not np.all(np.isfinite(t.data)):
        raise NumericError("non-finite input array")
    return t


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise TapeError("inputs belong to different tapes")
            tape = t.tape
    return tape


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, backward, check: bool = True) -> Tensor:
    # Ops that only select or move values pass check=False: their outputs are
    # finite whenever their inputs are. Otherwise one reduction, confirmed
    # elementwise before raising since a sum of finite values can overflow.
    if check and not np.isfinite(out.sum()) and not np.all(np.isfinite(out)):
        raise NumericError(f"{op}: non-finite result")
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(op, inputs, out, backward)


def _need_2d(op, *ts):
    for t in ts:
        if t.data.ndim != 2:
            raise DimensionError(f"{op}: expected a 2-d tensor, got shape {t.shape}")


def _check_index(idx, n, op):
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise GatherIndexError(f"{op}: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise GatherIndexError(f"{op}: index out of range [0, {n})")
    return idx.astype(np.int64, copy=False)


# ---------------------------------------------------------------- ops

def linear(x, wt, bias=None) -> Tensor:
    """x @ wt + bias for x (r, a), wt (a, b), bias (b,)."""
    x, wt = as_tensor(x), as_tensor(wt)
    _need_2d("linear", x, wt)
    if x.shape[1] != wt.shape[0]:
        raise DimensionError(f"linear: {x.shape} @ {wt.shape}")
    inputs = [x, wt]
    out = x.data @ wt.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (wt.shape[1],):
            raise DimensionError(f"linear: bias shape {bias.shape} for width {wt.shape[1]}")
        out = out + bias.data
        inputs.append(bias)
    xd, wd = x.data, wt.data

    def back(g, needs):
        gx = g @ wd.T if needs[0] else None
        gw = xd.T @ g if needs[1] else None
        if len(needs) == 3:
            return gx, gw, g.sum(axis=0) if needs[2] else None
        return gx, gw

    return _emit("linear", inputs, out, back)


def activation(x, kind: str) -> Tensor:
    x = as_tensor(x)
    if kind == "relu":
        out = np.maximum(x.data, 0.0)

        def back(g, needs):
            return (_kernels.mask_grad(np.ascontiguousarray(g), out),)

    elif kind == "sigmoid":
        out = expit(x.data)

        def back(g, needs):
            return (g * out * (1.0 - out),)

    elif kind == "tanh":
        out = np.tanh(x.data)

        def back(g, needs):
            return (g * (1.0 - out * out),)

    else:
        raise ConfigError(f"unknown activation {kind!r}")
    return _emit(kind, [x], out, back, check=kind != "relu")


def relu(x) -> Tensor:
    return activation(x, "relu")


def gather_group(x, idx) -> Tensor:
    """out[i, j, :] = x[idx[i, j], :]."""
    x = as_tensor(x)
    _need_2d("gather_group", x)
    n, c = x.shape
    idx = _check_index(idx, n, "gather_group")
    if idx.ndim != 2:
        raise DimensionError("gather_group: idx must be (m, k)")
    out = x.data[idx]

    def back(g, needs):
        return (_kernels.scatter_rows(idx.ravel(), np.ascontiguousarray(g.reshape(-1, c)), n),)

    return _emit("gather_group", [x], out, back, check=False)


def take_rows(x, rows) -> Tensor:
    """out[i, :] = x[rows[i], :]."""
    x = as_tensor(x)
    _need_2d("take_rows", x)
    n, c = x.shape
    rows = _check_index(rows, n, "take_rows").ravel()
    out = x.data[rows]

    def back(g, needs):
        return (_kernels.scatter_rows(rows, np.ascontiguousarray(g), n),)

    return _emit("take_rows", [x], out, back, check=False)


def reduce_group(x, kind: str) -> Tensor:
    """Max or mean over axis 1 of an (m, k, c) tensor."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise DimensionError(f"reduce_group: expected (m, k, c), got {x.shape}")
    m, k, c = x.shape
    if k < 1:
        raise DimensionError("reduce_group: empty group")
    if kind == "max":
        arg = np.argmax(x.data, axis=1)  # first maximum on ties
        out = np.take_along_axis(x.data, arg[:, None, :], axis=1)[:, 0, :]

        def back(g, needs):
            gx = np.zeros((m, k, c))
            np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
            return (gx,)

    elif kind == "mean":
        out = x.data.mean(axis=1)

        def back(g, needs):
            return (np.broadcast_to(g[:, None, :] / k, (m, k, c)).copy(),)

    else:
        raise ConfigError(f"unknown reduction {kind!r}")
    return _emit("reduce_" + kind, [x], out, back, check=False)


def gather_max(x, idx) -> Tensor:
    """reduce_group(gather_group(x, idx), "max") without materializing groups."""
    x = as_tensor(x)
    _need_2d("gather_max", x)
    n = x.shape[0]
    idx = _check_index(idx, n, "gather_max")
    if idx.ndim != 2 or idx.shape[1] < 1:
        raise DimensionError("gather_max: idx must be (m, k) with k >= 1")
    out, arg = _kernels.gather_max(np.ascontiguousarray(x.data), np.ascontiguousarray(idx))

    def back(g, needs):
        return (_kernels.scatter_cols(arg, np.ascontiguousarray(g), n),)

    return _emit("gather_max", [x], out, back, check=False)


def dense_group_max(x, wt, bias, k: int) -> Tensor:
    """Max over each block of k consecutive rows of relu(x @ wt + bias).

    Equal to reduce_group(reshape(relu(linear(x, wt, bias)), (G, k, c)), "max")
    since relu is monotone; the backward pass only visits argmax rows.
    """
    x, wt, bias = as_tensor(x), as_tensor(wt), as_tensor(bias)
    _need_2d("dense_group_max", x, wt)
    rows, a = x.shape
    if a != wt.shape[0] or bias.shape != (wt.shape[1],):
        raise DimensionError(f"dense_group_max: {x.shape} @ {wt.shape} + {bias.shape}")
    if k < 1 or rows % k:
        raise DimensionError(f"dense_group_max: {rows} rows not divisible into groups of {k}")
    xd, wd = x.data, wt.data
    # a per-channel constant commutes with the max, so the bias goes on after pooling
    pooled, arg = _kernels.group_max(xd @ wd, k)
    out = np.maximum(pooled + bias.data, 0.0)

    def back(g, needs):
        gout = _kernels.mask_grad(np.ascontiguousarray(g), out)
        gx, gwt, gb = _kernels.group_max_backward(
            np.ascontiguousarray(xd), np.ascontiguousarray(wd.T), arg, gout, k, needs[0], needs[1])
        return (gx if needs[0] else None), (gwt.T if needs[1] else None), (gb if needs[2] else None)

    return _emit("dense_group_max", [x, wt, bias], out, back)


def edge_max(centre, nbr, idx) -> Tensor:
    """relu(centre[i] + max_j nbr[idx[i, j]]) for centre (m, c), nbr (n, c), idx (m, k)."""
    centre, nbr = as_tensor(centre), as_tensor(nbr)
    _need_2d("edge_max", centre, nbr)
    n = nbr.shape[0]
    idx = _check_index(idx, n, "edge_max")
    if idx.ndim != 2 or idx.shape[0] != centre.shape[0] or idx.shape[1] < 1:
        raise DimensionError(f"edge_max: idx {idx.shape} for {centre.shape[0]} centres")
    if centre.shape[1] != nbr.shape[1]:
        raise DimensionError(f"edge_max: widths {centre.shape[1]} vs {nbr.shape[1]}")
    pooled, arg = _kernels.gather_max(np.ascontiguousarray(nbr.data), np.ascontiguousarray(idx))
    out = np.maximum(centre.data + pooled, 0.0)

    def back(g, needs):
        gm = _kernels.mask_grad(np.ascontiguousarray(g), out)
        return gm, (_kernels.scatter_cols(arg, gm, n) if needs[1] else None)

    return _emit("edge_max", [centre, nbr], out, back)


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _need_2d("concat_cols", a, b)
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row mismatch {a.shape} vs {b.shape}")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def back(g, needs):
        return g[:, :split], g[:, split:]

    return _emit("concat_cols", [a, b], out, back, check=False)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("hadamard", a, b)
    ad, bd = a.data, b.data

    def back(g, needs):
        return (g * bd if needs[0] else None), (g * ad if needs[1] else None)

    return _emit("hadamard", [a, b], ad * bd, back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", [a, b], a.data + b.data, lambda g, needs: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", [a, b], a.data - b.data, lambda g, needs: (g, -g))


def gather_sub_relu(src, centre, idx) -> Tensor:
    """relu(src[idx[i, j]] - centre[i]) laid out as (m * k, c) rows, row i*k + j."""
    src, centre = as_tensor(src), as_tensor(centre)
    _need_2d("gather_sub_relu", src, centre)
    n = src.shape[0]
    idx = _check_index(idx, n, "gather_sub_relu")
    if idx.ndim != 2 or idx.shape[0] != centre.shape[0] or src.shape[1] != centre.shape[1]:
        raise DimensionError(f"gather_sub_relu: src {src.shape}, centre {centre.shape}, idx {idx.shape}")
    out = _kernels.gather_sub_relu(np.ascontiguousarray(src.data), np.ascontiguousarray(centre.data), idx)

    def back(g, needs):
        return _kernels.gather_sub_relu_backward(np.ascontiguousarray(g), out, idx, n)

    return _emit("gather_sub_relu", [src, centre], out, back)


def add_to_group(grouped, rows) -> Tensor:
    """grouped (m, k, c) + rows (m, c), the row term shared across the k axis."""
    grouped, rows = as_tensor(grouped), as_tensor(rows)
    if grouped.data.ndim != 3 or rows.shape != (grouped.shape[0], grouped.shape[2]):
        raise DimensionError(f"add_to_group: {grouped.shape} + {rows.shape}")
    out = grouped.data + rows.data[:, None, :]

    def back(g, needs):
        return g, (g.sum(axis=1) if needs[1] else None)

    return _emit("add_to_group", [grouped, rows], out, back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {src} -> {shape}") from exc
    return _emit("reshape", [x], out, lambda g, needs: (g.reshape(src),), check=False)


def repeat_rows(x, times: int) -> Tensor:
    """(b, c) -> (b * times, c), each row repeated `times` times consecutively."""
    x = as_tensor(x)
    _need_2d("repeat_rows", x)
    b, c = x.shape
    out = np.repeat(x.data, times, axis=0)
    return _emit("repeat_rows", [x], out, lambda g, needs: (g.reshape(b, times, c).sum(axis=1),), check=False)


def slice_rows(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    _need_2d("slice_rows", x)
    n = x.shape[0]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice_rows: [{start}, {stop}) outside {n} rows")

    def back(g, needs):
        gx = np.zeros(x.shape)
        gx[start:stop] = g
        return (gx,)

    return _emit("slice_rows", [x], x.data[start:stop], back, check=False)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    return _emit("scale", [x], x.data * factor, lambda g, needs: (g * factor,))


def total(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _emit("total", [x], np.array(x.data.sum()), lambda g, needs: (np.full(shape, float(g)),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, size = x.shape, x.data.size
    return _emit("mean", [x], np.array(x.data.mean()), lambda g, needs: (np.full(shape, float(g) / size),))


def weighted_sum(terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """Sum of w * t over scalar tensors t."""
    weights = [float(w) for w, _ in terms]
    ts = [as_tensor(t) for _, t in terms]
    for t in ts:
        if t.data.size != 1:
            raise DimensionError("weighted_sum: terms must be scalars")
    out = np.array(sum(w * float(t.data) for w, t in zip(weights, ts)))
    return _emit("weighted_sum", ts, out, lambda g, needs: tuple(g * w for w in weights))


# ---------------------------------------------------------------- backward

def backward(tape: Tape, loss: Tensor, retain: bool = False) -> dict:
    """Gradients of the scalar `loss` w.r.t. every leaf watched on `tape`.

    Keys are the leaf names given to watch() (node ids for unnamed leaves);
    leaves the loss does not depend on get zero arrays.

    Unless `retain` is set the tape's records are dropped afterwards. Their
    closures hold the forward activations, and tensors point back at the tape,
    so keeping them would leave each step's graph to the cyclic collector.
    """
    if tape.released:
        raise TapeError("tape was already released by an earlier backward()")
    if loss.tape is not tape:
        raise TapeError("loss is not a node on this tape")
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output, None)
        if g is None:
            continue
        needs = tuple(i is not None for i in rec.inputs)
        parts = rec.backward(g, needs)
        for node, part in zip(rec.inputs, parts):
            if node is None or part is None:
                continue
            if node in grads:
                grads[node] = grads[node] + part
            else:
                grads[node] = part
    out = {}
    for node, name in tape.leaves.items():
        g = grads.get(node)
        out[name] = np.zeros(tape.shapes[node]) if g is None else np.asarray(g).reshape(tape.shapes[node])
    if not retain:
        tape.records.clear()
        tape.released = True
    return out
