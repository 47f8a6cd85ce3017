"""Adam, the step learning-rate schedule, and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError
from .tensor import Tape, Tensor, backward


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update over the keys of `grads`.

    Parameters absent from `grads` are left untouched (frozen). Returns new
    parameter arrays; the moment buffers in `state` are updated in place.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise DimensionError(f"adam_step: {name} param {params[name].shape} vs grad {g.shape}")
        if name in state.m and state.m[name].shape != g.shape:
            raise DimensionError(f"adam_step: {name} moment shape {state.m[name].shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        out[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state


def step_lr(epoch: int, base: float = 1e-3, decay: float = 0.7, every: int = 20, floor: float = 1e-5) -> float:
    return max(floor, base * decay ** (epoch // every))


def grad_check(f: Callable[[Tensor], Tensor], theta, eps: float = 1e-5) -> float:
    """Max over elements of |analytic - central difference| / max(1, |central difference|).

    `f` maps a Tensor to a scalar Tensor using tensor ops. Avoid relu kinks and
    max ties at `theta`; the check is only meaningful at generic points.
    """
    theta = np.array(theta, dtype=np.float64)
    tape = Tape()
    x = tape.watch(theta, "theta")
    analytic = backward(tape, f(x))["theta"]
    worst = 0.0
    flat = theta.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(theta)).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(theta)).data)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError("grad_check: non-finite evaluation")
        fd = (hi - lo) / (2.0 * eps)
        worst = max(worst, abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd)))
    return worst
