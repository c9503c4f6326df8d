"""Poincare ball primitives with interior guarantees.

Conventions (documented because the ball admits several):
  exp0(u)  = tanh(sqrt(c)|u|) * u / (sqrt(c)|u|)
  log0(x)  = artanh(sqrt(c)|x|) * x / (sqrt(c)|x|)
  dist(x,y) = (2/sqrt(c)) * artanh(sqrt(c) |(-x) (+) y|)

A consequence worth knowing: dist(origin, exp0(u)) = 2|u|.

All functions accept either plain float64 arrays of shape (..., d) or
autodiff Tensors and operate along the last axis, so the same formulas
serve the validated value types below and the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import val

# Interior margin: every ball point satisfies sqrt(c)*|x| <= 1 - BALL_EPS.
BALL_EPS = 1e-5
# Below this scaled norm exp0/log0 switch to their linear branch.
LINEAR_BRANCH_EPS = 1e-12
# Guard added to norms appearing in denominators.
NORM_GUARD = 1e-15


class InvalidArgumentError(ValueError):
    """Raised when an operation receives out-of-contract inputs."""


def _check_finite(x, what: str) -> None:
    if not np.all(np.isfinite(val(x))):
        raise InvalidArgumentError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class Curvature:
    """Magnitude of the (negative) curvature; the ball has curvature -c."""

    c: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise InvalidArgumentError(f"curvature must be a positive finite real, got {self.c}")

    @property
    def sqrt_c(self) -> float:
        return float(np.sqrt(self.c))


@dataclass(frozen=True)
class TangentVector:
    """A vector in the origin chart of the ball."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.float64))
        _check_finite(self.coords, "tangent vector")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


@dataclass(frozen=True)
class BallPoint:
    """A point strictly inside the ball of curvature -c."""

    coords: np.ndarray
    curvature: Curvature = field(default_factory=Curvature)

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.float64))
        _check_finite(self.coords, "ball point")
        scaled = self.curvature.sqrt_c * np.linalg.norm(self.coords)
        if scaled > 1.0 - BALL_EPS + 1e-15:
            raise InvalidArgumentError(
                f"point not strictly interior: sqrt(c)*|x| = {scaled} > 1 - {BALL_EPS}"
            )

    @property
    def boundary_gap(self) -> float:
        """1 - sqrt(c)*|x|, the margin to the ball boundary."""
        return float(1.0 - self.curvature.sqrt_c * np.linalg.norm(self.coords))


class PoincareBall:
    """Stateless ball operations for a fixed curvature magnitude.

    Methods take raw (..., d) arrays or Tensors; the module-level typed
    wrappers below validate and box the results.
    """

    def __init__(self, c: float = 1.0, interior_eps: float = BALL_EPS):
        if not (np.isfinite(c) and c > 0):
            raise InvalidArgumentError(f"curvature must be a positive finite real, got {c}")
        if not (0.0 < interior_eps < 1.0):
            raise InvalidArgumentError(f"interior_eps must lie in (0, 1), got {interior_eps}")
        self.c = float(c)
        self.sqrt_c = float(np.sqrt(c))
        self.interior_eps = float(interior_eps)

    # -- chart maps ------------------------------------------------------

    def expmap0(self, u):
        """Origin exponential map, projected to the strict interior."""
        s = ad.mul(ad.l2norm(u), self.sqrt_c)
        linear = val(s) < LINEAR_BRANCH_EPS
        factor = ad.where(linear, 1.0, ad.div(ad.tanh(s), ad.add(s, NORM_GUARD)))
        return self.project(ad.mul(u, factor))

    def logmap0(self, x):
        """Origin logarithmic map (inverse of :meth:`expmap0`)."""
        s = ad.mul(ad.l2norm(x), self.sqrt_c)
        linear = val(s) < LINEAR_BRANCH_EPS
        factor = ad.where(linear, 1.0, ad.div(ad.artanh(s), ad.add(s, NORM_GUARD)))
        return ad.mul(x, factor)

    # -- gyrovector ops ----------------------------------------------------

    def mobius_add(self, x, y):
        c = self.c
        x2 = ad.sq_norm(x)
        y2 = ad.sq_norm(y)
        xy = ad.inner(x, y)
        num = ad.add(
            ad.mul(x, ad.add(ad.add(1.0, ad.mul(2.0 * c, xy)), ad.mul(c, y2))),
            ad.mul(y, ad.sub(1.0, ad.mul(c, x2))),
        )
        denom = ad.add(ad.add(1.0, ad.mul(2.0 * c, xy)), ad.mul(c * c, ad.mul(x2, y2)))
        return self.project(ad.div(num, denom))

    def mobius_scale(self, t, x):
        s = ad.mul(ad.l2norm(x), self.sqrt_c)
        radial = ad.tanh(ad.mul(t, ad.artanh(s)))
        return self.project(ad.mul(x, ad.div(radial, ad.add(s, NORM_GUARD))))

    def geodesic(self, x, y, t):
        """Geodesic from x (t=0) to y (t=1); constant-speed in dist."""
        return self.mobius_add(x, self.mobius_scale(t, self.mobius_add(ad.mul(x, -1.0), y)))

    def dist(self, x, y):
        """Geodesic distance, shape (..., 1)."""
        delta = self.mobius_add(ad.mul(x, -1.0), y)
        return ad.mul(ad.artanh(ad.mul(ad.l2norm(delta), self.sqrt_c)), 2.0 / self.sqrt_c)

    # -- interior projection ----------------------------------------------

    def project(self, x, eps: float | None = None):
        """Radially rescale anything outside the 1-eps shell back inside."""
        eps = self.interior_eps if eps is None else eps
        n = ad.l2norm(x)
        limit = (1.0 - eps) / self.sqrt_c
        outside = val(n) > limit
        if not outside.any() and not ad.is_tensor(x):
            return x
        scale = ad.where(outside, ad.div(limit, ad.add(n, NORM_GUARD)), 1.0)
        return ad.mul(x, scale)

    def boundary_gap(self, x):
        """1 - sqrt(c)*|x| along the last axis (plain array)."""
        return 1.0 - self.sqrt_c * np.linalg.norm(val(x), axis=-1)


# -- typed single-point surface ---------------------------------------------


def _ball(c: Curvature) -> PoincareBall:
    return PoincareBall(c.c)


def exp0(u: TangentVector, curvature: Curvature) -> BallPoint:
    """Map an origin-chart vector onto the ball."""
    return BallPoint(_ball(curvature).expmap0(u.coords), curvature)


def log0(x: BallPoint) -> TangentVector:
    """Map a ball point back to the origin chart."""
    return TangentVector(_ball(x.curvature).logmap0(x.coords))


def mobius_add(x: BallPoint, y: BallPoint) -> BallPoint:
    _check_same_ball(x, y)
    return BallPoint(_ball(x.curvature).mobius_add(x.coords, y.coords), x.curvature)


def mobius_scale(t: float, x: BallPoint) -> BallPoint:
    if not np.isfinite(t):
        raise InvalidArgumentError(f"scale factor must be finite, got {t}")
    return BallPoint(_ball(x.curvature).mobius_scale(float(t), x.coords), x.curvature)


def geodesic(start: BallPoint, end: BallPoint, t: float) -> BallPoint:
    _check_same_ball(start, end)
    if not (0.0 <= t <= 1.0):
        raise InvalidArgumentError(f"geodesic parameter must lie in [0, 1], got {t}")
    return BallPoint(_ball(start.curvature).geodesic(start.coords, end.coords, float(t)), start.curvature)


def dist(x: BallPoint, y: BallPoint) -> float:
    _check_same_ball(x, y)
    return float(_ball(x.curvature).dist(x.coords, y.coords).squeeze())


def project_interior(x, curvature: Curvature, eps: float = BALL_EPS) -> BallPoint:
    """Clamp a raw vector into the strict interior (identity if already there)."""
    _check_finite(x, "projection input")
    if not (0.0 < eps < 1.0):
        raise InvalidArgumentError(f"eps must lie in (0, 1), got {eps}")
    ball = PoincareBall(curvature.c, interior_eps=eps)
    return BallPoint(ball.project(np.asarray(x, dtype=np.float64)), curvature)


def origin(dim: int, curvature: Curvature | None = None) -> BallPoint:
    return BallPoint(np.zeros(dim), curvature or Curvature())


def _check_same_ball(x: BallPoint, y: BallPoint) -> None:
    if x.coords.shape != y.coords.shape:
        raise InvalidArgumentError(
            f"dimension mismatch: {x.coords.shape} vs {y.coords.shape}"
        )
    if x.curvature.c != y.curvature.c:
        raise InvalidArgumentError(
            f"curvature mismatch: {x.curvature.c} vs {y.curvature.c}"
        )
