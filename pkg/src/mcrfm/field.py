"""Task-conditioned velocity network over the product manifold.

Input: [origin-chart ball coords; Euclidean coords; sinusoidal time
embedding; task context]. A shared two-hidden-layer trunk with gated
activation feeds two branch heads. The heads are zero-initialized, so the
untrained field is identically zero and transport starts as the identity.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, val
from .config import TrainConfig
from .context import TaskContext
from .geometry import InvalidArgumentError, PoincareBall
from .manifold import ProductState, ProductVelocity


def time_embedding(t, dim: int = 32, max_freq: float = 1000.0) -> np.ndarray:
    """Interleaved (sin, cos) pairs at geometric frequencies 1..max_freq.

    ``t`` is a scalar or (n,) / (n, 1) array; the result has shape (n, dim)
    and every entry lies in [-1, 1]. Time values are treated as constants.
    """
    tv = np.atleast_1d(np.asarray(val(t), dtype=np.float64)).reshape(-1, 1)
    if np.any(tv < 0.0) or np.any(tv > 1.0):
        raise InvalidArgumentError("time embedding expects t in [0, 1]")
    half = dim // 2
    freqs = max_freq ** (np.arange(half) / (half - 1)) if half > 1 else np.ones(1)
    angles = tv * freqs  # (n, half)
    out = np.empty((tv.shape[0], 2 * half))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def init_vector_field(params: dict[str, Tensor], rng: np.random.Generator, cfg: TrainConfig) -> None:
    in_dim = cfg.hyp_dim + cfg.euc_dim + cfg.time_dim + cfg.context_dim
    nn.add_linear(params, rng, "field.trunk1", in_dim, cfg.trunk_width)
    nn.add_linear(params, rng, "field.trunk2", cfg.trunk_width, cfg.trunk_width)
    nn.add_linear(params, rng, "field.head_hyp", cfg.trunk_width, cfg.hyp_dim, zero_init=True)
    nn.add_linear(params, rng, "field.head_euc", cfg.trunk_width, cfg.euc_dim, zero_init=True)


def eval_field(
    params: dict[str, Tensor],
    cfg: TrainConfig,
    ball: PoincareBall,
    state: ProductState,
    t,
    ctx: TaskContext,
) -> ProductVelocity:
    """Branch velocities in chart coordinates; deterministic in its inputs."""
    n = val(state.euc).shape[0] if cfg.euc_dim else val(state.hyp).shape[0]
    chart = ball.logmap0(state.hyp)
    tfeat = time_embedding(t, cfg.time_dim, cfg.time_freq_max)
    if tfeat.shape[0] == 1 and n > 1:
        tfeat = np.repeat(tfeat, n, axis=0)
    if tfeat.shape[0] != n:
        raise InvalidArgumentError(f"time batch {tfeat.shape[0]} does not match state batch {n}")
    ctx_rows = ad.matmul(np.ones((n, 1)), ctx.vec)  # broadcast (1, d_c) per sample
    x = ad.concat([chart, state.euc, tfeat, ctx_rows], axis=-1)
    h = ad.silu(nn.linear(params, "field.trunk1", x))
    h = ad.silu(nn.linear(params, "field.trunk2", h))
    return ProductVelocity(
        nn.linear(params, "field.head_hyp", h),
        nn.linear(params, "field.head_euc", h),
    )
