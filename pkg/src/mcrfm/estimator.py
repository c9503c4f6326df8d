"""Scikit-learn style estimator wrapping the episodic adapter.

``fit(X, y)`` treats (X, y) as the support set of one few-shot task and
trains a fresh adapter on it; ``predict(X)`` projects, transports, and
classifies queries with the trained parameters. All constructor arguments
are plain hyperparameters, so ``get_params`` / ``set_params`` / ``clone``
work the usual way.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import TrainConfig, apply_variant
from .trainer import diagnostics, infer, train_adapter


class MCRFMClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot classifier via mixed-curvature flow-matching transport.

    Parameters mirror TrainConfig; ``variant`` applies one of the named
    structural presets (e.g. "euclidean", "no_ce") on top.
    """

    def __init__(
        self,
        epochs: int = 50,
        batch_size: int = 64,
        base_lr: float = 5e-4,
        weight_decay: float = 1e-4,
        warmup_epochs: int = 5,
        clip_norm: float = 1.0,
        nfe: int = 3,
        seed: int = 42,
        curvature: float = 1.0,
        hyp_dim: int = 128,
        euc_dim: int = 128,
        shrinkage: float = 0.2,
        euc_weight: float = 1.0,
        cls_weight: float = 1.0,
        smoothing: float = 0.1,
        ramp_epochs: int = 10,
        variant: str = "full",
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.clip_norm = clip_norm
        self.nfe = nfe
        self.seed = seed
        self.curvature = curvature
        self.hyp_dim = hyp_dim
        self.euc_dim = euc_dim
        self.shrinkage = shrinkage
        self.euc_weight = euc_weight
        self.cls_weight = cls_weight
        self.smoothing = smoothing
        self.ramp_epochs = ramp_epochs
        self.variant = variant

    def _config(self) -> TrainConfig:
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs,
            clip_norm=self.clip_norm,
            nfe=self.nfe,
            seed=self.seed,
            curvature=self.curvature,
            hyp_dim=self.hyp_dim,
            euc_dim=self.euc_dim,
            shrinkage=self.shrinkage,
            euc_weight=self.euc_weight,
            cls_weight=self.cls_weight,
            smoothing=self.smoothing,
            ramp_epochs=self.ramp_epochs,
        )
        return apply_variant(cfg, self.variant)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes in the support set")
        counts = np.bincount(encoded)
        if counts.min() < 1:
            raise ValueError("every class needs at least one support sample")
        cfg = self._config()
        outcome = train_adapter(X, encoded, cfg, len(self.classes_))
        if outcome.diverged:
            raise RuntimeError(f"training diverged: {outcome.divergence_message}")
        self.config_ = cfg
        self.params_ = outcome.params
        self.support_x_ = X
        self.support_y_ = encoded
        self.n_features_in_ = X.shape[1]
        self.training_log_ = outcome.epoch_records
        self.stability_ = diagnostics(cfg, outcome)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        _, logits = infer(
            self.params_, self.config_, self.support_x_, self.support_y_, X,
            len(self.classes_),
        )
        return logits

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=-1)]

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
