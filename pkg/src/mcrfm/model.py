"""Assembly of all trainable pieces into one adapter forward pass."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, val
from .config import TrainConfig
from .context import PrototypeBank, TaskContext, build_prototypes, encode_context, init_task_encoder
from .field import eval_field, init_vector_field
from .geometry import PoincareBall
from .heads import gate_multipliers, hybrid_logits, init_heads
from .manifold import ProductState, interpolate, target_velocity
from .objective import (
    LossBreakdown,
    ce_loss,
    fm_loss,
    hyp_ramp,
    make_breakdown,
    total_loss,
)
from .projector import init_projector, project_features
from .transport import SolverConfig, Trajectory, transport


def init_adapter(
    rng: np.random.Generator, cfg: TrainConfig, feature_dim: int, num_classes: int
) -> dict[str, Tensor]:
    """All trainable parameters, keyed by dotted name."""
    params: dict[str, Tensor] = {}
    init_projector(params, rng, cfg, feature_dim)
    if cfg.use_context:
        init_task_encoder(params, rng, cfg)
    init_vector_field(params, rng, cfg)
    init_heads(params, rng, cfg, num_classes)
    return params


def detach_params(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Plain value view of the parameters; forwards run tape-free on it."""
    return {k: p.value for k, p in params.items()}


def make_ball(cfg: TrainConfig) -> PoincareBall:
    return PoincareBall(cfg.curvature, interior_eps=cfg.ball_eps)


def build_bank_and_context(
    params, cfg: TrainConfig, ball: PoincareBall, support_x, support_y: np.ndarray, num_classes: int
) -> tuple[PrototypeBank, TaskContext]:
    """Prototypes + context from the support set with the current parameters."""
    _, (u_hyp, u_euc) = project_features(params, cfg, ball, support_x)
    if not cfg.prototype_gradients:
        u_hyp = u_hyp.detach() if ad.is_tensor(u_hyp) else u_hyp
        u_euc = u_euc.detach() if ad.is_tensor(u_euc) else u_euc
    bank = build_prototypes(ball, u_hyp, u_euc, support_y, num_classes, cfg.shrinkage)
    ctx = encode_context(params, cfg, ball, bank)
    return bank, ctx


def prototype_state(bank: PrototypeBank, labels: np.ndarray) -> ProductState:
    """Per-sample transport targets gathered from the bank by class label."""
    return ProductState(ad.take_rows(bank.hyp, labels), ad.take_rows(bank.euc, labels))


def training_loss(
    params,
    cfg: TrainConfig,
    ball: PoincareBall,
    batch_x,
    batch_y: np.ndarray,
    bank: PrototypeBank,
    ctx: TaskContext,
    epoch: int,
    times: np.ndarray,
) -> tuple[object, LossBreakdown, Trajectory]:
    """One combined flow-matching + classification objective on a batch.

    ``times`` holds the per-sample path times, shape (n, 1), already drawn
    from U(time_eps, 1 - time_eps).
    """
    state0, _ = project_features(params, cfg, ball, batch_x)
    targets = prototype_state(bank, batch_y)
    state_t = interpolate(ball, state0, targets, times)
    wanted = target_velocity(ball, state_t, targets, times, cfg.time_eps)
    predicted = eval_field(params, cfg, ball, state_t, times, ctx)
    gate_t, hyp_mult_t, euc_mult_t = gate_multipliers(params, cfg, ball, state_t, ctx)
    ramp_w = hyp_ramp(epoch, cfg.ramp_epochs)
    loss_hyp, loss_euc, raw_hyp, raw_euc = fm_loss(
        predicted, wanted, hyp_mult_t, euc_mult_t, ramp_w, cfg.euc_weight
    )

    solver = SolverConfig(cfg.nfe, record_trajectory=cfg.record_trajectories)
    transported, traj = transport(
        ball, state0, lambda s, t: eval_field(params, cfg, ball, s, t, ctx), solver
    )
    _, hyp_mult_T, euc_mult_T = gate_multipliers(params, cfg, ball, transported, ctx)
    logits, mix = hybrid_logits(
        params, cfg, ball, transported, bank, ctx, hyp_mult_T, euc_mult_T
    )
    ce = ce_loss(logits, batch_y, cfg.smoothing)
    total = total_loss(loss_hyp, loss_euc, ce, cfg.cls_weight)
    breakdown = make_breakdown(
        loss_hyp, loss_euc, ce, total, raw_hyp, raw_euc,
        ramp_w, cfg.euc_weight, cfg.cls_weight,
        gate_t, hyp_mult_t, euc_mult_t, mix,
    )
    return total, breakdown, traj


def classify(
    params,
    cfg: TrainConfig,
    ball: PoincareBall,
    features,
    bank: PrototypeBank,
    ctx: TaskContext,
    nfe: int | None = None,
) -> tuple[np.ndarray, np.ndarray, Trajectory]:
    """Project, transport, and classify; returns (predictions, logits, trajectory)."""
    state0, _ = project_features(params, cfg, ball, features)
    solver = SolverConfig(cfg.nfe if nfe is None else nfe)
    transported, traj = transport(
        ball, state0, lambda s, t: eval_field(params, cfg, ball, s, t, ctx), solver
    )
    _, hyp_mult, euc_mult = gate_multipliers(params, cfg, ball, transported, ctx)
    logits, _ = hybrid_logits(params, cfg, ball, transported, bank, ctx, hyp_mult, euc_mult)
    logits_v = val(logits)
    return np.argmax(logits_v, axis=-1), logits_v, traj
