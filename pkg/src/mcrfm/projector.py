"""Trainable bottleneck from backbone features to the mixed-curvature state.

Hyperbolic branch: linear map, unit-normalize, scale by a smoothly clamped
radius, exponential-map to the ball. Euclidean branch: linear map, layer
norm, positive learned scale. The unclamped initial radius is ~0.5 so
optimization starts mid-ball, far from the boundary.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, parameter
from .config import TrainConfig
from .geometry import InvalidArgumentError, PoincareBall
from .manifold import ProductState

# Guard in the hyperbolic unit-normalizer.
HYP_NORM_EPS = 1e-6
# Initial clamped hyperbolic radius (before training).
INIT_HYP_SCALE = 0.5
# Initial Euclidean scale softplus(raw) = 1.
INIT_EUC_SCALE = 1.0


def clamp_hyp_scale(raw, alpha_min: float, alpha_max: float):
    """Smooth clamp onto [alpha_min, alpha_max]; differentiable everywhere."""
    return ad.add(alpha_min, ad.mul(alpha_max - alpha_min, ad.sigmoid(raw)))


def _inverse_clamp(target: float, alpha_min: float, alpha_max: float) -> float:
    p = (target - alpha_min) / (alpha_max - alpha_min)
    return float(np.log(p / (1.0 - p)))


def _inverse_softplus(target: float) -> float:
    return float(np.log(np.expm1(target)))


def init_projector(
    params: dict[str, Tensor], rng: np.random.Generator, cfg: TrainConfig, feature_dim: int
) -> None:
    nn.add_linear(params, rng, "proj.hyp_map", feature_dim, cfg.hyp_dim)
    nn.add_linear(params, rng, "proj.euc_map", feature_dim, cfg.euc_dim)
    params["proj.hyp_scale_raw"] = parameter(
        _inverse_clamp(INIT_HYP_SCALE, cfg.alpha_min, cfg.alpha_max), "proj.hyp_scale_raw"
    )
    params["proj.euc_scale_raw"] = parameter(
        _inverse_softplus(INIT_EUC_SCALE), "proj.euc_scale_raw"
    )
    if cfg.euc_ln_affine:
        nn.add_layer_norm(params, "proj.euc_norm", cfg.euc_dim)


def project_features(
    params: dict[str, Tensor], cfg: TrainConfig, ball: PoincareBall, features
) -> tuple[ProductState, tuple]:
    """Map (n, d) features to ball x Euclidean states plus bottleneck pairs.

    The bottleneck pair (pre-exp hyperbolic vector, Euclidean vector) is
    returned too because prototypes are averaged in bottleneck space.
    """
    fdim = ad.val(features).shape[-1]
    expected = params["proj.hyp_map.weight"].shape[0]
    if fdim != expected:
        raise InvalidArgumentError(f"feature dim {fdim} does not match projector dim {expected}")
    raw_h = nn.linear(params, "proj.hyp_map", features)
    scale_h = clamp_hyp_scale(params["proj.hyp_scale_raw"], cfg.alpha_min, cfg.alpha_max)
    unit_h = ad.div(raw_h, ad.add(ad.l2norm(raw_h), HYP_NORM_EPS))
    u_hyp = ad.mul(unit_h, scale_h)

    raw_e = nn.linear(params, "proj.euc_map", features)
    if cfg.euc_ln_affine:
        normed = nn.layer_norm(params, "proj.euc_norm", raw_e)
    else:
        normed = ad.layer_norm(raw_e)
    # the extra 1/sqrt(d_e) gives |u_e| ~ alpha_e, the same O(1) norm scale
    # as the unit-normalized hyperbolic branch; without it the Euclidean
    # branch dominates the shared trunk input and the flow-matching loss
    # by a factor of d_e
    unit_scale = 1.0 / np.sqrt(cfg.euc_dim) if cfg.euc_dim else 1.0
    u_euc = ad.mul(normed, ad.mul(ad.softplus(params["proj.euc_scale_raw"]), unit_scale))

    state = ProductState(ball.expmap0(u_hyp), u_euc)
    return state, (u_hyp, u_euc)
