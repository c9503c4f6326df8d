"""Fixed-step Euler transport with interior re-projection after every step.

The ball update runs through the origin chart: z_h <- project(exp0(log0(z_h)
+ dt * v_h)). Because exp0 already lands strictly inside the shell and the
projection rescales anything beyond it, the interior bound holds after
every step no matter how large the velocity is.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import val
from .geometry import PoincareBall
from .manifold import ProductState, state_boundary_gap


class SolverDivergenceError(RuntimeError):
    """Raised when the solver produces non-finite state."""


@dataclass(frozen=True)
class SolverConfig:
    nfe: int = 3
    record_trajectory: bool = False

    def __post_init__(self):
        if self.nfe < 1:
            raise ValueError(f"nfe must be >= 1, got {self.nfe}")


@dataclass
class Trajectory:
    """Boundary gaps after every step; full state snapshots are optional."""

    boundary_gaps: list = field(default_factory=list)
    states: list | None = None

    def record(self, ball: PoincareBall, state: ProductState) -> None:
        self.boundary_gaps.append(state_boundary_gap(ball, state))
        if self.states is not None:
            self.states.append(ProductState(val(state.hyp).copy(), val(state.euc).copy()))

    @property
    def min_gap(self) -> float:
        return float(min(g.min() for g in self.boundary_gaps))

    @property
    def all_gaps(self) -> np.ndarray:
        return np.concatenate([g.reshape(-1) for g in self.boundary_gaps])


def transport(
    ball: PoincareBall,
    state: ProductState,
    field_fn,
    cfg: SolverConfig,
) -> tuple[ProductState, Trajectory]:
    """Integrate ``field_fn(state, t) -> ProductVelocity`` from t=0 to t=1."""
    traj = Trajectory(states=[] if cfg.record_trajectory else None)
    traj.record(ball, state)
    dt = 1.0 / cfg.nfe
    differentiable = ad.is_tensor(state.hyp) or ad.is_tensor(state.euc)
    for step in range(cfg.nfe):
        v = field_fn(state, step * dt)
        differentiable = differentiable or ad.is_tensor(v.hyp) or ad.is_tensor(v.euc)
        if not differentiable and not (np.any(val(v.hyp)) or np.any(val(v.euc))):
            # exactly zero step: keep the state bit-identical (safe only
            # outside the tape, where no gradient flows through the update)
            traj.record(ball, state)
            continue
        new_hyp = ball.project(
            ball.expmap0(ad.add(ball.logmap0(state.hyp), ad.mul(v.hyp, dt)))
        )
        new_euc = ad.add(state.euc, ad.mul(v.euc, dt))
        state = ProductState(new_hyp, new_euc)
        if not (np.all(np.isfinite(val(state.hyp))) and np.all(np.isfinite(val(state.euc)))):
            raise SolverDivergenceError(f"non-finite state after solver step {step + 1}/{cfg.nfe}")
        traj.record(ball, state)
    return state, traj
