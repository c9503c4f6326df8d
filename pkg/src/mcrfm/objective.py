"""Gated flow-matching loss, smoothed cross-entropy, and the combined objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import val
from .manifold import ProductVelocity


def hyp_ramp(epoch: int, ramp_epochs: int) -> float:
    """Linear warmup weight for the hyperbolic flow-matching term."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    if ramp_epochs <= 0:
        return 1.0
    return min(1.0, (epoch + 1) / ramp_epochs)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-batch scalars logged once per epoch (JSON-lines training log)."""

    fm_hyp: float  # ramp- and gate-weighted hyperbolic term
    fm_euc: float  # lambda- and gate-weighted Euclidean term
    ce: float
    total: float
    raw_fm_hyp: float  # unweighted mean squared residual, hyperbolic branch
    raw_fm_euc: float  # unweighted mean squared residual, Euclidean branch
    hyp_ramp: float
    euc_weight: float
    cls_weight: float
    mean_gate: float
    mean_hyp_mult: float
    mean_euc_mult: float
    mean_mix: float

    @property
    def fm_total(self) -> float:
        return self.fm_hyp + self.fm_euc

    def to_record(self, hyp_dim: int, euc_dim: int) -> dict:
        """Serializable record; branch terms of a removed branch are omitted."""
        rec = {
            "ce": self.ce,
            "total": self.total,
            "hyp_ramp": self.hyp_ramp,
            "euc_weight": self.euc_weight,
            "cls_weight": self.cls_weight,
            "mean_gate": self.mean_gate,
            "mean_mix": self.mean_mix,
        }
        if hyp_dim > 0:
            rec["fm_hyp"] = self.fm_hyp
            rec["raw_fm_hyp"] = self.raw_fm_hyp
            rec["mean_hyp_mult"] = self.mean_hyp_mult
        if euc_dim > 0:
            rec["fm_euc"] = self.fm_euc
            rec["raw_fm_euc"] = self.raw_fm_euc
            rec["mean_euc_mult"] = self.mean_euc_mult
        return rec


def fm_loss(
    predicted: ProductVelocity,
    target: ProductVelocity,
    hyp_mult,
    euc_mult,
    ramp_weight: float,
    euc_weight: float,
):
    """Batch means of the gated, weighted squared chart-space residuals.

    Returns (weighted hyp term, weighted euc term, raw hyp mean, raw euc mean).
    """
    res_hyp = ad.sq_norm(ad.sub(predicted.hyp, target.hyp))  # (n, 1)
    res_euc = ad.sq_norm(ad.sub(predicted.euc, target.euc))
    loss_hyp = ad.mul(ad.tmean(ad.mul(res_hyp, hyp_mult)), ramp_weight)
    loss_euc = ad.mul(ad.tmean(ad.mul(res_euc, euc_mult)), euc_weight)
    return loss_hyp, loss_euc, ad.tmean(res_hyp), ad.tmean(res_euc)


def ce_loss(logits, labels, smoothing: float):
    return nn.cross_entropy(logits, labels, smoothing)


def total_loss(loss_hyp, loss_euc, ce, cls_weight: float):
    return ad.add(ad.add(loss_hyp, loss_euc), ad.mul(ce, cls_weight))


def make_breakdown(
    loss_hyp,
    loss_euc,
    ce,
    total,
    raw_hyp,
    raw_euc,
    ramp_weight: float,
    euc_weight: float,
    cls_weight: float,
    gate,
    hyp_mult,
    euc_mult,
    mix,
) -> LossBreakdown:
    return LossBreakdown(
        fm_hyp=float(val(loss_hyp)),
        fm_euc=float(val(loss_euc)),
        ce=float(val(ce)),
        total=float(val(total)),
        raw_fm_hyp=float(val(raw_hyp)),
        raw_fm_euc=float(val(raw_euc)),
        hyp_ramp=ramp_weight,
        euc_weight=euc_weight,
        cls_weight=cls_weight,
        mean_gate=float(np.mean(val(gate))),
        mean_hyp_mult=float(np.mean(val(hyp_mult))),
        mean_euc_mult=float(np.mean(val(euc_mult))),
        mean_mix=float(np.mean(val(mix))),
    )
