"""Episodic training/inference orchestration, determinism, and diagnostics.

One adapter is trained per episode (per support split). Seeds control both
the support sampling (datahub) and the adapter initialization here. Run
reports are canonical JSON and contain nothing volatile, so identical
(config, seed, input files) produce byte-identical reports; wall-clock
time goes to the training log instead.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import val
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .datahub import Episode, FeatureCache, episode_views, stream_rng
from .model import (
    build_bank_and_context,
    classify,
    detach_params,
    init_adapter,
    make_ball,
    training_loss,
)
from .optim import AdamW, DivergenceError, WarmupCosineSchedule, clip_global_norm

@dataclass
class StabilityReport:
    """Quantified stability diagnostics (thresholds come from the config)."""

    min_boundary_gap: float
    median_boundary_gap: float
    ratio_per_epoch: list  # per-epoch median raw hyp/euc residual ratio (None if a branch is off)
    median_ratio: float | None
    collapse: bool
    boundary_risk: bool
    loss_imbalance: bool

    @property
    def event_free(self) -> bool:
        return not (self.collapse or self.boundary_risk or self.loss_imbalance)

    def to_dict(self) -> dict:
        return {
            "min_boundary_gap": self.min_boundary_gap,
            "median_boundary_gap": self.median_boundary_gap,
            "ratio_per_epoch": self.ratio_per_epoch,
            "median_ratio": self.median_ratio,
            "events": {
                "collapse": self.collapse,
                "boundary_risk": self.boundary_risk,
                "loss_imbalance": self.loss_imbalance,
            },
        }


@dataclass
class TrainOutcome:
    params: dict
    epoch_records: list
    gap_min: float
    gap_median: float
    ratio_per_epoch: list
    gate_per_epoch: list
    diverged: bool = False
    divergence_message: str | None = None
    wall_clock: float = 0.0


def _epoch_mean(records: list[dict]) -> dict:
    keys = records[0].keys()
    out = {}
    for k in keys:
        vals = [r[k] for r in records if r[k] is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def train_adapter(
    support_x: np.ndarray,
    support_y: np.ndarray,
    cfg: TrainConfig,
    num_classes: int,
    progress=None,
) -> TrainOutcome:
    """Run the episodic training loop on a support set.

    Per epoch: rebuild prototypes and context, then for every minibatch
    sample path times, regress the field onto chart-space target
    velocities (gated), transport the batch for classification, and apply
    one clipped AdamW update on the combined objective.
    """
    started = time.perf_counter()
    ball = make_ball(cfg)
    feature_dim = support_x.shape[1]
    init_rng = stream_rng("init", cfg.seed)
    params = init_adapter(init_rng, cfg, feature_dim, num_classes)
    names = sorted(params)
    plist = [params[n] for n in names]
    opt = AdamW(plist, weight_decay=cfg.weight_decay)
    schedule = WarmupCosineSchedule(cfg.base_lr, cfg.warmup_epochs, cfg.epochs)
    train_rng = stream_rng("train", cfg.seed)

    n = support_x.shape[0]
    epoch_records: list[dict] = []
    ratio_per_epoch: list = []
    gate_per_epoch: list = []
    all_gaps_min = np.inf
    gap_samples: list[np.ndarray] = []
    last_good = {k: p.value.copy() for k, p in params.items()}

    for epoch in range(cfg.epochs):
        lr = schedule.lr_at(epoch)
        frozen = None
        if cfg.proto_refresh == "epoch":
            # freeze prototypes/context for the whole epoch as constants
            frozen = build_bank_and_context(
                detach_params(params), cfg, ball, support_x, support_y, num_classes
            )
        order = train_rng.permutation(n)
        batch_records, batch_ratios = [], []
        try:
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                times = train_rng.uniform(cfg.time_eps, 1.0 - cfg.time_eps, size=(idx.size, 1))
                if frozen is not None:
                    bank, ctx = frozen
                else:
                    bank, ctx = build_bank_and_context(
                        params, cfg, ball, support_x, support_y, num_classes
                    )
                loss, breakdown, traj = training_loss(
                    params, cfg, ball, support_x[idx], support_y[idx], bank, ctx, epoch, times
                )
                if not np.isfinite(val(loss)):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}: "
                        + json.dumps(breakdown.to_record(cfg.hyp_dim, cfg.euc_dim))
                    )
                opt.zero_grad()
                loss.backward()
                clip_global_norm(plist, cfg.clip_norm)
                opt.step(lr)

                rec = breakdown.to_record(cfg.hyp_dim, cfg.euc_dim)
                batch_records.append(rec)
                if cfg.hyp_dim > 0 and cfg.euc_dim > 0 and breakdown.raw_fm_euc > 0:
                    batch_ratios.append(breakdown.raw_fm_hyp / breakdown.raw_fm_euc)
                if cfg.hyp_dim > 0:
                    gaps = traj.all_gaps
                    all_gaps_min = min(all_gaps_min, float(gaps.min()))
                    gap_samples.append(gaps)
        except DivergenceError as e:
            return TrainOutcome(
                params={k: last_good[k] for k in last_good},
                epoch_records=epoch_records,
                gap_min=float(all_gaps_min),
                gap_median=_median_gap(gap_samples),
                ratio_per_epoch=ratio_per_epoch,
                gate_per_epoch=gate_per_epoch,
                diverged=True,
                divergence_message=str(e),
                wall_clock=time.perf_counter() - started,
            )

        last_good = {k: p.value.copy() for k, p in params.items()}
        epoch_rec = {"epoch": epoch, "lr": lr}
        epoch_rec.update(_epoch_mean(batch_records))
        epoch_records.append(epoch_rec)
        ratio_per_epoch.append(float(np.median(batch_ratios)) if batch_ratios else None)
        gate_per_epoch.append(epoch_rec.get("mean_gate"))
        if progress is not None:
            progress(epoch, epoch_rec)

    return TrainOutcome(
        params=params,
        epoch_records=epoch_records,
        gap_min=float(all_gaps_min) if np.isfinite(all_gaps_min) else 1.0,
        gap_median=_median_gap(gap_samples),
        ratio_per_epoch=ratio_per_epoch,
        gate_per_epoch=gate_per_epoch,
        wall_clock=time.perf_counter() - started,
    )


def _median_gap(gap_samples: list[np.ndarray]) -> float:
    if not gap_samples:
        return 1.0
    return float(np.median(np.concatenate(gap_samples)))


def infer(
    params,
    cfg: TrainConfig,
    support_x: np.ndarray,
    support_y: np.ndarray,
    query_x: np.ndarray,
    num_classes: int,
    nfe: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild prototypes/context from the support set only, then transport
    and classify queries. Queries never influence prototypes or each other."""
    ball = make_ball(cfg)
    values = detach_params(params) if any(hasattr(p, "value") for p in params.values()) else params
    bank, ctx = build_bank_and_context(values, cfg, ball, support_x, support_y, num_classes)
    preds, logits, _ = classify(values, cfg, ball, query_x, bank, ctx, nfe=nfe)
    return preds, logits


def diagnostics(cfg: TrainConfig, outcome: TrainOutcome) -> StabilityReport:
    """Quantify the qualitative stability claims into checkable events."""
    ratios = [r for r in outcome.ratio_per_epoch if r is not None]
    median_ratio = float(np.median(ratios)) if ratios else None
    low, high = cfg.imbalance_band
    imbalance = median_ratio is not None and not (low <= median_ratio <= high)

    collapse = False
    lo_g, hi_g = cfg.collapse_gate_band
    run = 0
    for g in outcome.gate_per_epoch:
        if g is not None and not (lo_g <= g <= hi_g):
            run += 1
            if run >= cfg.collapse_patience:
                collapse = True
                break
        else:
            run = 0

    boundary_risk = outcome.gap_min < cfg.boundary_risk_factor * cfg.ball_eps

    return StabilityReport(
        min_boundary_gap=outcome.gap_min,
        median_boundary_gap=outcome.gap_median,
        ratio_per_epoch=outcome.ratio_per_epoch,
        median_ratio=median_ratio,
        collapse=collapse,
        boundary_risk=boundary_risk,
        loss_imbalance=imbalance,
    )


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def train_episode(
    cache: FeatureCache,
    episode: Episode,
    cfg: TrainConfig,
    out_dir: str | Path,
    run_name: str,
    variant: str = "full",
    episode_file: str = "",
    progress=None,
) -> dict:
    """Train on an episode's support set and write all run artifacts.

    Writes reports/<run>.json (canonical, byte-stable), logs/<run>.jsonl
    (one loss record per epoch plus a wall-clock line), and a checkpoint
    pair under checkpoints/. Returns the report dict.
    """
    out_dir = Path(out_dir)
    support_x, support_y, query_x, query_y = episode_views(cache, episode)
    outcome = train_adapter(support_x, support_y, cfg, cache.num_classes, progress=progress)

    report: dict = {
        "schema_version": 1,
        "kind": "run_report",
        "run_name": run_name,
        "variant": variant,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "data": {
            "cache_hash": episode.cache_hash,
            "episode_file": episode_file,
            "feature_dim": cache.dim,
            "num_classes": cache.num_classes,
            "k_shot": episode.k_shot,
            "support_size": int(len(support_y)),
            "query_size": int(len(query_y)),
        },
        "epochs": outcome.epoch_records,
        "diverged": outcome.diverged,
    }

    ckpt_prefix = out_dir / "checkpoints" / run_name
    save_checkpoint(
        ckpt_prefix,
        outcome.params if not outcome.diverged else _as_tensors(outcome.params),
        hyperparameters={"variant": variant, "num_classes": cache.num_classes,
                         "feature_dim": cache.dim, "config": cfg.to_dict()},
        config_hash=cfg.config_hash(),
    )
    report["checkpoint"] = str(Path("checkpoints") / run_name)

    if outcome.diverged:
        report["divergence"] = outcome.divergence_message
        report["metrics"] = None
        report["stability"] = None
    else:
        sup_preds, _ = infer(outcome.params, cfg, support_x, support_y, support_x, cache.num_classes)
        qry_preds, _ = infer(outcome.params, cfg, support_x, support_y, query_x, cache.num_classes)
        stability = diagnostics(cfg, outcome)
        report["metrics"] = {
            "initial_train_loss": outcome.epoch_records[0]["total"],
            "final_train_loss": outcome.epoch_records[-1]["total"],
            "support_top1": float(np.mean(sup_preds == support_y)),
            "query_top1": float(np.mean(qry_preds == query_y)),
        }
        report["stability"] = stability.to_dict()

    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    (reports_dir / f"{run_name}.json").write_text(canonical_json(report) + "\n", encoding="utf-8")

    logs_dir = out_dir / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    with open(logs_dir / f"{run_name}.jsonl", "w", encoding="utf-8") as f:
        for rec in outcome.epoch_records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        f.write(json.dumps({"wall_clock_sec": outcome.wall_clock}) + "\n")
    return report


def _as_tensors(values: dict) -> dict:
    from .autodiff import parameter

    return {k: (v if hasattr(v, "value") else parameter(v, k)) for k, v in values.items()}
