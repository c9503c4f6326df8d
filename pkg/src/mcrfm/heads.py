"""Adaptive branch gating and the hybrid prototype-linear classifier.

The gate and the head mixer share the same structure: sigmoid of a scalar
bias, a small network on the normalized branch features, and a linear map
from the task context. Both start exactly neutral (0.5) because the
non-bias components are zero-initialized.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, val
from .config import TrainConfig
from .context import PrototypeBank, TaskContext
from .geometry import PoincareBall
from .manifold import ProductState

# softplus(GAMMA_RAW_INIT) = 1: calibration scales start at one.
GAMMA_RAW_INIT = 0.5413248546129181


def init_heads(
    params: dict[str, Tensor], rng: np.random.Generator, cfg: TrainConfig, num_classes: int
) -> None:
    branch_dim = cfg.hyp_dim + cfg.euc_dim
    norms = ["shared"] if cfg.share_branch_norms else ["gate", "cls"]
    for tag in norms:
        nn.add_layer_norm(params, f"heads.{tag}_norm_hyp", cfg.hyp_dim)
        nn.add_layer_norm(params, f"heads.{tag}_norm_euc", cfg.euc_dim)
    for tag in ("gate", "mix"):
        params[f"heads.{tag}.bias_raw"] = nn.parameter(0.0, f"heads.{tag}.bias_raw")
        nn.add_mlp2(
            params, rng, f"heads.{tag}.delta", branch_dim, cfg.gate_hidden, 1, zero_init_out=True
        )
        nn.add_linear(params, rng, f"heads.{tag}.ctx", cfg.context_dim, 1, zero_init=True)
    params["heads.hyp_gamma_raw"] = nn.parameter(GAMMA_RAW_INIT, "heads.hyp_gamma_raw")
    params["heads.euc_gamma_raw"] = nn.parameter(GAMMA_RAW_INIT, "heads.euc_gamma_raw")
    nn.add_linear(params, rng, "heads.lin", branch_dim, num_classes, zero_init=True)


def branch_features(
    params: dict[str, Tensor],
    cfg: TrainConfig,
    ball: PoincareBall,
    state: ProductState,
    consumer: str = "gate",
):
    """Layer-normalized chart concat [r_h; r_e] feeding gate, mixer, and head."""
    tag = "shared" if cfg.share_branch_norms else consumer
    r_hyp = nn.layer_norm(params, f"heads.{tag}_norm_hyp", ball.logmap0(state.hyp))
    r_euc = nn.layer_norm(params, f"heads.{tag}_norm_euc", state.euc)
    return r_hyp, r_euc


def _sigmoid_unit(params, cfg, name: str, joint, ctx: TaskContext):
    score = ad.add(
        params[f"heads.{name}.bias_raw"],
        ad.add(
            nn.mlp2(params, f"heads.{name}.delta", joint),
            nn.linear(params, f"heads.{name}.ctx", ctx.vec),
        ),
    )
    return ad.sigmoid(score)


def gate_multipliers(
    params: dict[str, Tensor],
    cfg: TrainConfig,
    ball: PoincareBall,
    state: ProductState,
    ctx: TaskContext,
):
    """Per-sample gate g in (0,1) and branch multipliers (2g, 2(1-g)).

    The multipliers always sum to 2; a disabled gate pins both to 1.
    """
    n = val(state.euc).shape[0] if cfg.euc_dim else val(state.hyp).shape[0]
    if not cfg.adaptive_gate:
        ones = np.ones((n, 1))
        return 0.5 * ones, ones, ones
    r_hyp, r_euc = branch_features(params, cfg, ball, state, "gate")
    g = _sigmoid_unit(params, cfg, "gate", ad.concat([r_hyp, r_euc], axis=-1), ctx)
    return g, ad.mul(g, 2.0), ad.mul(ad.sub(1.0, g), 2.0)


def proto_logits(
    params: dict[str, Tensor],
    cfg: TrainConfig,
    ball: PoincareBall,
    state: ProductState,
    bank: PrototypeBank,
    hyp_mult,
    euc_mult,
):
    """Negative calibrated product distances to every prototype, (n, K)."""
    n = val(state.euc).shape[0] if cfg.euc_dim else val(state.hyp).shape[0]
    k = bank.num_classes
    z_hyp = ad.reshape(state.hyp, (n, 1, cfg.hyp_dim))
    z_euc = ad.reshape(state.euc, (n, 1, cfg.euc_dim))
    p_hyp = ad.reshape(bank.hyp, (1, k, cfg.hyp_dim))
    p_euc = ad.reshape(bank.euc, (1, k, cfg.euc_dim))
    hyp_sq = ad.reshape(ad.square(ball.dist(z_hyp, p_hyp)), (n, k))
    euc_sq = ad.reshape(ad.sq_norm(ad.sub(z_euc, p_euc)), (n, k))
    hyp_gamma = ad.softplus(params["heads.hyp_gamma_raw"])
    euc_gamma = ad.softplus(params["heads.euc_gamma_raw"])
    weighted = ad.add(
        ad.mul(ad.mul(hyp_sq, hyp_gamma), hyp_mult),
        ad.mul(ad.mul(euc_sq, euc_gamma), euc_mult),
    )
    return ad.mul(weighted, -1.0)


def linear_logits(
    params: dict[str, Tensor],
    cfg: TrainConfig,
    ball: PoincareBall,
    state: ProductState,
    hyp_mult,
    euc_mult,
):
    """Linear head on the sqrt-gated, normalized chart concatenation."""
    r_hyp, r_euc = branch_features(params, cfg, ball, state, "cls")
    joint = ad.concat(
        [ad.mul(r_hyp, ad.sqrt(hyp_mult)), ad.mul(r_euc, ad.sqrt(euc_mult))], axis=-1
    )
    return nn.linear(params, "heads.lin", joint)


def hybrid_logits(
    params: dict[str, Tensor],
    cfg: TrainConfig,
    ball: PoincareBall,
    state: ProductState,
    bank: PrototypeBank,
    ctx: TaskContext,
    hyp_mult,
    euc_mult,
):
    """Final logits plus the mixing weight actually used, per head_mode."""
    if cfg.head_mode == "proto":
        return proto_logits(params, cfg, ball, state, bank, hyp_mult, euc_mult), np.ones((1, 1))
    if cfg.head_mode == "linear":
        return linear_logits(params, cfg, ball, state, hyp_mult, euc_mult), np.zeros((1, 1))
    proto = proto_logits(params, cfg, ball, state, bank, hyp_mult, euc_mult)
    lin = linear_logits(params, cfg, ball, state, hyp_mult, euc_mult)
    if cfg.adaptive_mixer:
        r_hyp, r_euc = branch_features(params, cfg, ball, state, "cls")
        mix = _sigmoid_unit(params, cfg, "mix", ad.concat([r_hyp, r_euc], axis=-1), ctx)
    else:
        n = val(proto).shape[0]
        mix = 0.5 * np.ones((n, 1))
    logits = ad.add(ad.mul(proto, mix), ad.mul(lin, ad.sub(1.0, mix)))
    return logits, mix
