"""Product-manifold states: ball factor x Euclidean factor.

Paths interpolate geodesically on the ball and linearly in the Euclidean
factor; target velocities live in the origin chart for both branches, so
the chart identity  xi(t) + (1-t) * u*(t) = xi(1)  holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import val
from .geometry import BALL_EPS, InvalidArgumentError, PoincareBall

# Path times are sampled from U(TIME_EPS, 1 - TIME_EPS) to keep the
# 1/(1-t) target velocity away from its singularity.
TIME_EPS = 0.01


@dataclass(frozen=True)
class ProductState:
    """Paired ball + Euclidean coordinates, the ODE state.

    Fields hold (..., d_h) / (..., d_e) arrays or Tensors; either factor
    may be zero-width when a geometry variant removes that branch.
    """

    hyp: object
    euc: object

    @property
    def hyp_dim(self) -> int:
        return val(self.hyp).shape[-1]

    @property
    def euc_dim(self) -> int:
        return val(self.euc).shape[-1]


@dataclass(frozen=True)
class ProductVelocity:
    """Origin-chart velocity for the ball factor plus Euclidean velocity."""

    hyp: object
    euc: object


def _check_compatible(a: ProductState, b: ProductState) -> None:
    if val(a.hyp).shape[-1] != val(b.hyp).shape[-1] or val(a.euc).shape[-1] != val(b.euc).shape[-1]:
        raise InvalidArgumentError(
            "product states have mismatched dimensions: "
            f"({val(a.hyp).shape[-1]}, {val(a.euc).shape[-1]}) vs "
            f"({val(b.hyp).shape[-1]}, {val(b.euc).shape[-1]})"
        )


def interpolate(ball: PoincareBall, start: ProductState, end: ProductState, t) -> ProductState:
    """Point at time t on the product path from ``start`` to ``end``.

    ``t`` may be a scalar or a (..., 1) array/Tensor of per-sample times.
    """
    _check_compatible(start, end)
    tv = val(t)
    if np.any(tv < 0.0) or np.any(tv > 1.0):
        raise InvalidArgumentError("interpolation time must lie in [0, 1]")
    hyp = ball.geodesic(start.hyp, end.hyp, t)
    euc = ad.add(ad.mul(start.euc, ad.sub(1.0, t)), ad.mul(end.euc, t))
    return ProductState(hyp, euc)


def target_velocity(
    ball: PoincareBall, state_t: ProductState, end: ProductState, t, time_eps: float = TIME_EPS
) -> ProductVelocity:
    """Constant-speed chart velocity of the straight path to the endpoint."""
    _check_compatible(state_t, end)
    tv = val(t)
    if np.any(tv < time_eps - 1e-12) or np.any(tv > 1.0 - time_eps + 1e-12):
        raise InvalidArgumentError(
            f"target velocity needs t in [{time_eps}, {1 - time_eps}] "
            "(the 1/(1-t) denominator is singular at t=1)"
        )
    remaining = ad.sub(1.0, t)
    hyp = ad.div(ad.sub(ball.logmap0(end.hyp), ball.logmap0(state_t.hyp)), remaining)
    euc = ad.div(ad.sub(end.euc, state_t.euc), remaining)
    return ProductVelocity(hyp, euc)


def product_sq_dist(
    ball: PoincareBall,
    state: ProductState,
    target: ProductState,
    hyp_gamma=1.0,
    euc_gamma=1.0,
    hyp_mult=1.0,
    euc_mult=1.0,
):
    """Calibrated, gated squared product distance, shape (..., 1).

    hyp_mult * hyp_gamma * dist_ball(z_h, p_h)^2 + euc_mult * euc_gamma * |z_e - p_e|^2
    """
    _check_compatible(state, target)
    hyp_term = ad.square(ball.dist(state.hyp, target.hyp))
    euc_term = ad.sq_norm(ad.sub(state.euc, target.euc))
    return ad.add(
        ad.mul(ad.mul(hyp_term, hyp_gamma), hyp_mult),
        ad.mul(ad.mul(euc_term, euc_gamma), euc_mult),
    )


def state_boundary_gap(ball: PoincareBall, state: ProductState) -> np.ndarray:
    """Margin 1 - sqrt(c)*|z_h| per sample; empty hyp branch gives all-ones."""
    if state.hyp_dim == 0:
        return np.ones(val(state.hyp).shape[:-1])
    return ball.boundary_gap(state.hyp)


def check_interior(ball: PoincareBall, state: ProductState, slack: float = 1e-12) -> None:
    gap = state_boundary_gap(ball, state)
    if np.any(gap < ball.interior_eps - slack):
        raise InvalidArgumentError(
            f"hyperbolic state violates the interior bound: min gap {gap.min()}"
        )


__all__ = [
    "ProductState",
    "ProductVelocity",
    "interpolate",
    "target_velocity",
    "product_sq_dist",
    "state_boundary_gap",
    "check_interior",
    "TIME_EPS",
    "BALL_EPS",
]
