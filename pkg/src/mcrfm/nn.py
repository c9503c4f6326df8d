"""Parameter initialization and the small set of network building blocks."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Symmetric uniform fan-in init, shape (fan_in, fan_out)."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def add_linear(
    params: dict[str, Tensor],
    rng: np.random.Generator,
    name: str,
    fan_in: int,
    fan_out: int,
    zero_init: bool = False,
) -> None:
    w = np.zeros((fan_in, fan_out)) if zero_init else linear_init(rng, fan_in, fan_out)
    params[f"{name}.weight"] = parameter(w, f"{name}.weight")
    params[f"{name}.bias"] = parameter(np.zeros(fan_out), f"{name}.bias")


def linear(params: dict[str, Tensor], name: str, x):
    return ad.add(ad.matmul(x, params[f"{name}.weight"]), params[f"{name}.bias"])


def add_layer_norm(params: dict[str, Tensor], name: str, dim: int) -> None:
    params[f"{name}.gain"] = parameter(np.ones(dim), f"{name}.gain")
    params[f"{name}.bias"] = parameter(np.zeros(dim), f"{name}.bias")


def layer_norm(params: dict[str, Tensor], name: str, x):
    return ad.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def mlp2(params: dict[str, Tensor], name: str, x):
    """Two-layer head: linear -> silu -> linear."""
    return linear(params, f"{name}.out", ad.silu(linear(params, f"{name}.hidden", x)))


def add_mlp2(
    params: dict[str, Tensor],
    rng: np.random.Generator,
    name: str,
    fan_in: int,
    width: int,
    fan_out: int,
    zero_init_out: bool = False,
) -> None:
    add_linear(params, rng, f"{name}.hidden", fan_in, width)
    add_linear(params, rng, f"{name}.out", width, fan_out, zero_init=zero_init_out)


def cross_entropy(logits, labels: np.ndarray, smoothing: float = 0.0):
    """Mean smoothed cross-entropy; smoothing mass s/(K-1) off the true class."""
    n, k = ad.val(logits).shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    if not (0.0 <= smoothing < 1.0):
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    targets = np.full((n, k), smoothing / (k - 1) if k > 1 else 0.0)
    targets[np.arange(n), labels] = 1.0 - smoothing
    logp = ad.log_softmax(logits, axis=-1)
    return ad.div(ad.tsum(ad.mul(logp, -targets)), float(n))
