"""Parameter initialization helpers shared by the networks."""

import numpy as np

from .errors import ConfigError


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, scheme: str = "he"):
    """Weight (fan_in, fan_out) and zero bias (fan_out,)."""
    if scheme == "he":
        bound = np.sqrt(6.0 / fan_in)
    elif scheme == "xavier":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}")
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


def layer_count(params, prefix: str) -> int:
    i = 0
    while f"{prefix}{i}.w" in params:
        i += 1
    return i
