"""AdamW with decoupled weight decay, warmup+cosine schedule, global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class DivergenceError(RuntimeError):
    """Raised when training produces non-finite values."""


@dataclass
class WarmupCosineSchedule:
    """Linear per-epoch ramp to base_lr, then cosine decay to zero."""

    base_lr: float
    warmup_epochs: int
    total_epochs: int

    def __post_init__(self):
        if not (0 <= self.warmup_epochs <= self.total_epochs):
            raise ValueError(
                f"need 0 <= warmup ({self.warmup_epochs}) <= total ({self.total_epochs})"
            )

    def lr_at(self, epoch: int) -> float:
        if not (0 <= epoch < self.total_epochs):
            raise ValueError(f"epoch {epoch} outside [0, {self.total_epochs})")
        if epoch < self.warmup_epochs:
            return self.base_lr * (epoch + 1) / self.warmup_epochs
        span = max(self.total_epochs - self.warmup_epochs, 1)
        progress = (epoch - self.warmup_epochs) / span
        return self.base_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def clip_global_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class AdamW:
    """Standard bias-corrected AdamW; decay is decoupled from the moments."""

    params: list[Tensor]
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    _m: list[np.ndarray] = field(default_factory=list)
    _v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.value = np.asarray(p.value - lr * (update + self.weight_decay * p.value))
            if not np.all(np.isfinite(p.value)):
                raise DivergenceError(f"non-finite values in parameter {p.name!r} after update")

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
