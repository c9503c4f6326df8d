"""Shrunken class prototypes and the fixed-width task context vector.

Prototypes are class means in bottleneck space pulled toward the global
support mean, then lifted onto the product manifold. The context encoder
summarizes the prototype bank through token projection, single-head
attention pooling, and symmetric global statistics, so its output is
invariant to class relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor, val
from .config import TrainConfig
from .geometry import PoincareBall


class InvalidEpisodeError(ValueError):
    """Raised when a support set cannot produce valid prototypes."""


@dataclass(frozen=True)
class PrototypeBank:
    """Per-class transport targets, ordered by class id."""

    hyp: object  # (K, d_h) ball points
    euc: object  # (K, d_e)
    num_classes: int
    shrinkage: float

    def detached(self) -> "PrototypeBank":
        h = self.hyp.detach() if ad.is_tensor(self.hyp) else self.hyp
        e = self.euc.detach() if ad.is_tensor(self.euc) else self.euc
        return PrototypeBank(h, e, self.num_classes, self.shrinkage)


@dataclass(frozen=True)
class TaskContext:
    """Fixed-width conditioning vector plus reporting statistics."""

    vec: object  # (1, context_dim)
    num_classes: int
    stats: dict


def _class_sums(values, labels: np.ndarray, num_classes: int):
    """Per-class sums and counts in a canonical order (class id ascending,
    rows within a class sorted lexicographically by value), so the result
    is bit-identical under any reordering of the support rows."""
    sums, counts = [], []
    v = val(values)
    for k in range(num_classes):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            raise InvalidEpisodeError(f"class {k} has no support samples")
        idx = idx[np.lexsort(v[idx].T[::-1])] if v.shape[-1] else idx
        sums.append(ad.tsum(ad.take_rows(values, idx), axis=0, keepdims=True))
        counts.append(idx.size)
    return ad.concat(sums, axis=0), np.array(counts, dtype=np.float64)


def class_means(values, labels: np.ndarray, num_classes: int):
    """Per-class means ordered by class id (canonical summation order)."""
    sums, counts = _class_sums(values, labels, num_classes)
    return ad.div(sums, counts.reshape(-1, 1))


def build_prototypes(
    ball: PoincareBall,
    hyp_bottleneck,
    euc_bottleneck,
    labels: np.ndarray,
    num_classes: int,
    shrinkage: float,
) -> PrototypeBank:
    if not (0.0 <= shrinkage <= 1.0):
        raise InvalidEpisodeError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    if num_classes < 2:
        raise InvalidEpisodeError(f"need at least 2 classes, got {num_classes}")
    sums_h, counts = _class_sums(hyp_bottleneck, labels, num_classes)
    sums_e, _ = _class_sums(euc_bottleneck, labels, num_classes)
    mu_h = ad.div(sums_h, counts.reshape(-1, 1))
    mu_e = ad.div(sums_e, counts.reshape(-1, 1))
    if shrinkage > 0.0:
        # global support mean from the per-class sums, so its summation
        # order is canonical too
        n = float(counts.sum())
        global_h = ad.div(ad.tsum(sums_h, axis=0, keepdims=True), n)
        global_e = ad.div(ad.tsum(sums_e, axis=0, keepdims=True), n)
        mu_h = ad.add(ad.mul(mu_h, 1.0 - shrinkage), ad.mul(global_h, shrinkage))
        mu_e = ad.add(ad.mul(mu_e, 1.0 - shrinkage), ad.mul(global_e, shrinkage))
    return PrototypeBank(ball.expmap0(mu_h), mu_e, num_classes, shrinkage)


def init_task_encoder(params: dict[str, Tensor], rng: np.random.Generator, cfg: TrainConfig) -> None:
    token_in = cfg.hyp_dim + cfg.euc_dim
    nn.add_linear(params, rng, "ctx.token", token_in, cfg.token_dim)
    nn.add_linear(params, rng, "ctx.key", cfg.token_dim, cfg.token_dim)
    nn.add_linear(params, rng, "ctx.value", cfg.token_dim, cfg.token_dim)
    params["ctx.query"] = nn.parameter(
        nn.linear_init(rng, cfg.token_dim, 1), "ctx.query"
    )
    nn.add_linear(params, rng, "ctx.stats", 6, cfg.stats_dim)
    nn.add_linear(params, rng, "ctx.out", cfg.token_dim + cfg.stats_dim, cfg.context_dim)


def encode_context(
    params: dict[str, Tensor], cfg: TrainConfig, ball: PoincareBall, bank: PrototypeBank
) -> TaskContext:
    """Attention-pool projected prototype tokens and append global statistics."""
    chart = ball.logmap0(bank.hyp)
    tokens = ad.concat([chart, bank.euc], axis=-1)  # (K, d_h + d_e)
    k = bank.num_classes

    hyp_norms = ad.l2norm(chart)  # (K, 1)
    euc_norms = ad.l2norm(bank.euc)
    pair_i, pair_j = np.triu_indices(k, k=1)
    pair_dist = ad.l2norm(ad.sub(ad.take_rows(tokens, pair_i), ad.take_rows(tokens, pair_j)))
    stats_vec = ad.concat(
        [
            ad.reshape(ad.tmean(hyp_norms), (1, 1)),
            ad.reshape(ad.amax(hyp_norms), (1, 1)),
            ad.reshape(ad.tmean(euc_norms), (1, 1)),
            ad.reshape(ad.amax(euc_norms), (1, 1)),
            ad.reshape(ad.tmean(pair_dist), (1, 1)),
            np.array([[k / cfg.max_classes_norm]]),
        ],
        axis=-1,
    )

    stats = {
        "num_classes": k,
        "mean_hyp_norm": float(val(stats_vec)[0, 0]),
        "max_hyp_norm": float(val(stats_vec)[0, 1]),
        "mean_euc_norm": float(val(stats_vec)[0, 2]),
        "max_euc_norm": float(val(stats_vec)[0, 3]),
        "mean_pairwise_dist": float(val(stats_vec)[0, 4]),
    }

    if not cfg.use_context:
        return TaskContext(np.zeros((1, cfg.context_dim)), k, stats)

    tok = ad.silu(nn.linear(params, "ctx.token", tokens))
    keys = nn.linear(params, "ctx.key", tok)
    values = nn.linear(params, "ctx.value", tok)
    scores = ad.div(ad.matmul(keys, params["ctx.query"]), np.sqrt(cfg.token_dim))  # (K, 1)
    attn = ad.softmax(scores, axis=0)
    pooled = ad.tsum(ad.mul(values, attn), axis=0, keepdims=True)  # (1, token_dim)

    feats = ad.concat([pooled, ad.silu(nn.linear(params, "ctx.stats", stats_vec))], axis=-1)
    vec = nn.linear(params, "ctx.out", feats)
    return TaskContext(vec, k, stats)
